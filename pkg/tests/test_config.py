"""Config parsing, normalization round trip and checksum behaviour."""

import pytest

from ramanmem.config import (
    ConfigError,
    default_config,
    dump_config,
    load_config,
    parse_config,
)


def test_dump_parse_round_trip():
    cfg = default_config()
    assert parse_config(dump_config(cfg)) == cfg


def test_empty_text_gives_defaults():
    assert parse_config("") == default_config()


def test_partial_override_keeps_other_defaults():
    cfg = parse_config("[run]\nseed = 7\n")
    base = default_config()
    assert cfg.run.seed == 7
    assert cfg.run.n_frames == base.run.n_frames
    assert cfg.geometry == base.geometry
    assert cfg.camera == base.camera


def test_comments_and_blank_lines_ignored():
    text = "# leading comment\n\n[run]\n; another\nseed = 9\n"
    assert parse_config(text).run.seed == 9


def test_camera_keys_map_to_pane_shape():
    cfg = parse_config("[camera]\npane_width_px = 32\npane_height_px = 16\n")
    assert cfg.camera.width_px == 32
    assert cfg.camera.height_px == 16


def test_camera_focal_length_follows_chain():
    cfg = parse_config("[chain]\nf3_m = 0.25\n")
    assert cfg.camera.f3_m == 0.25
    # halving f3 doubles the angular pitch of a pixel
    assert cfg.camera.pitch_urad == pytest.approx(2 * default_config().camera.pitch_urad)


def test_steer_axes_list():
    cfg = parse_config("[chain]\nsteer_axes = x,y\n")
    assert cfg.chain.steer_axes == ("x", "y")
    with pytest.raises(ConfigError, match="steer_axes"):
        parse_config("[chain]\nsteer_axes = z\n")


def test_metadata_is_free_form_and_carried():
    cfg = parse_config("[metadata]\noperator = rk\nnote = warm cell, day 3\n")
    assert cfg.metadata["operator"] == "rk"
    assert cfg.metadata["note"] == "warm cell, day 3"
    # defaults still present unless overridden
    assert cfg.metadata["pump_power_mw"] == "70.0"
    # and the round trip keeps them
    assert parse_config(dump_config(cfg)) == cfg


def test_unknown_section_is_anchored():
    with pytest.raises(ConfigError) as ei:
        parse_config("[typo]\nkey = 1\n", path="exp.ini")
    assert str(ei.value) == "exp.ini:1: unknown section [typo]"
    assert ei.value.line == 1


def test_unknown_key_is_anchored():
    with pytest.raises(ConfigError) as ei:
        parse_config("[run]\nseeed = 1\n", path="exp.ini")
    assert "exp.ini:2:" in str(ei.value)
    assert "seeed" in str(ei.value)


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError, match="duplicate key"):
        parse_config("[run]\nseed = 1\nseed = 2\n")


def test_malformed_line_rejected():
    with pytest.raises(ConfigError, match="key = value"):
        parse_config("[run]\njust some words\n")


def test_key_outside_section_rejected():
    with pytest.raises(ConfigError, match="outside any"):
        parse_config("seed = 1\n")


def test_bad_value_reports_key_and_line():
    with pytest.raises(ConfigError) as ei:
        parse_config("[run]\nseed = twelve\n", path="exp.ini")
    msg = str(ei.value)
    assert msg.startswith("exp.ini:2:")
    assert "seed" in msg


def test_nan_rejected():
    with pytest.raises(ConfigError, match="nan"):
        parse_config("[retrieval]\neta0 = nan\n")


def test_semantic_errors_become_config_errors():
    with pytest.raises(ConfigError):
        parse_config("[run]\nn_frames = 0\n")
    with pytest.raises(ConfigError, match="inconsistent"):
        parse_config("[herald]\nzeta = 0.25\np = 0.5\n")


def test_herald_zeta_override_recomputes_p():
    cfg = parse_config("[herald]\nzeta = 0.25\n")
    assert cfg.herald.zeta == 0.25
    assert cfg.herald.p == pytest.approx(0.2)
    cfg2 = parse_config("[herald]\np = 0.5\n")
    assert cfg2.herald.zeta == pytest.approx(1.0)


def test_checksum_is_stable_and_sensitive():
    base = default_config()
    again = parse_config(dump_config(base))
    assert base.checksum() == again.checksum()
    assert base.checksum() != base.with_seed(54321).checksum()
    tweaked = parse_config("[metadata]\nnote = x\n")
    assert tweaked.checksum() != base.checksum()


def test_with_seed_only_touches_run():
    cfg = default_config().with_seed(99)
    assert cfg.run.seed == 99
    assert cfg.run.n_frames == default_config().run.n_frames
    assert cfg.geometry == default_config().geometry


def test_default_mode_grid_size():
    assert len(default_config().mode_set().centers_urad) == 121


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        load_config(tmp_path / "nope.ini")


def test_load_config_reads_file(tmp_path):
    p = tmp_path / "exp.ini"
    p.write_text("[run]\nseed = 33\nn_frames = 12\n")
    cfg = load_config(p)
    assert cfg.run.seed == 33
    assert cfg.run.n_frames == 12
