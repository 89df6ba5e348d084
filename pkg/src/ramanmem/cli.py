"""Command line front end: simulate | correlate | steer | herald.

Exit codes: 0 ok, 2 config problem, 3 at least one unreachable steering
target, 4 at least one requested spot fit failed to converge.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from typing import Iterable, Iterator, Optional

import numpy as np

from . import analysis, control, scattering, stackio
from .config import ConfigError, ExperimentConfig, default_config, load_config
from .geometry import Angle2D

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_UNREACHABLE = 3
EXIT_FIT_FAILED = 4


def _load_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else default_config()
    run = cfg.run
    if getattr(args, "seed", None) is not None:
        run = dataclasses.replace(run, seed=args.seed)
    if getattr(args, "frames", None) is not None:
        run = dataclasses.replace(run, n_frames=args.frames)
    return dataclasses.replace(cfg, run=run)


def _make_reference(camera, pane: str, angle: Angle2D, radius_urad: float) -> analysis.Reference:
    if radius_urad > 0.0:
        return analysis.Reference.disc(camera, pane, angle, radius_urad)
    return analysis.Reference.pixel(camera, pane, angle)


def _correlate_frames(
    frames: Iterable[scattering.Frame], camera, reference: analysis.Reference,
    seed: int, checksum: int,
) -> analysis.CorrelationMap:
    acc = analysis.MomentAccumulator.empty(camera, reference)
    for frame in frames:
        analysis.accumulate(acc, frame)
    return analysis.correlation_map(acc, camera, seed=seed, config_checksum=checksum)


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    schedule = None
    if args.schedule:
        schedule = control.load_schedule(args.schedule, cfg.chain)
        if len(schedule) != cfg.run.n_frames:
            raise ConfigError(
                f"schedule has {len(schedule)} rows but the run asks for "
                f"{cfg.run.n_frames} frames",
                path=args.schedule,
            )
    checksum = cfg.checksum()
    with stackio.StackWriter(
        args.out, cfg.camera, cfg.run.n_frames, cfg.run.seed, checksum
    ) as writer:
        for frame in scattering.iter_simulated_frames(cfg, schedule=schedule):
            writer.append(frame)
    print(
        f"wrote {args.out}: {cfg.run.n_frames} frames, seed={cfg.run.seed}, "
        f"config_checksum={checksum:016x}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# correlate


def _frame_source(args, cfg: Optional[ExperimentConfig]):
    """Yields (camera, seed, checksum, frame iterator) from a file or a fresh run."""
    if args.stack:
        camera, _count, seed, checksum, frames = stackio.iter_stack(args.stack)
        return camera, seed, checksum, frames
    assert cfg is not None
    return (
        cfg.camera,
        cfg.run.seed,
        cfg.checksum(),
        scattering.iter_simulated_frames(cfg),
    )


def cmd_correlate(args) -> int:
    cfg = None if args.stack else _load_config(args)
    camera, seed, checksum, frames = _frame_source(args, cfg)
    ref_angle = Angle2D(args.ref_x, args.ref_y)
    reference = _make_reference(camera, args.ref_pane, ref_angle, args.ref_radius)
    cmap = _correlate_frames(frames, camera, reference, seed, checksum)

    prefix = args.out
    for pane in analysis.PANES:
        analysis.map_to_csv(cmap, pane, f"{prefix}_{pane}.csv")
        analysis.map_to_pgm(cmap, pane, f"{prefix}_{pane}.pgm")
    twin_pane = "anti_stokes" if args.ref_pane == "stokes" else "stokes"
    fit = analysis.locate_twin_spot(cmap, pane=twin_pane)
    analysis.fit_to_csv(fit, f"{prefix}_fit.csv", label="twin", seed=seed, config_checksum=checksum)
    print(
        f"reference {args.ref_pane} ({ref_angle.theta_x:g}, {ref_angle.theta_y:g}) urad, "
        f"{cmap.n_frames} frames"
    )
    if fit.converged:
        print(
            f"twin spot on {twin_pane}: centre ({fit.center_x_urad:.2f}, "
            f"{fit.center_y_urad:.2f}) urad, FWHM ({fit.fwhm_x_urad:.1f}, "
            f"{fit.fwhm_y_urad:.1f}) urad, peak C = {fit.amplitude + fit.offset:.4f}"
        )
        return EXIT_OK
    print("twin spot fit did not converge", file=sys.stderr)
    return EXIT_FIT_FAILED


# ---------------------------------------------------------------------------
# steer


def _fiber_grid(args, cfg: ExperimentConfig) -> list[Angle2D]:
    """Stokes-side fiber positions served by the steered (y) axis.

    The x coordinate defaults to the one column whose twin needs no x tilt:
    conjugation maps x_S to -(lambda_r/lambda_w) x_S, so x_S = -target_x
    (lambda_w/lambda_r) lands on target_x by itself.
    """
    if args.fiber_x is not None:
        x = args.fiber_x
    else:
        ratio = cfg.geometry.lambda_read_m / cfg.geometry.lambda_write_m
        x = -args.target_x / ratio
    ys = np.linspace(-args.fiber_span / 2.0, args.fiber_span / 2.0, args.fibers)
    return [Angle2D(x, float(y)) for y in ys]


def cmd_steer(args) -> int:
    cfg = _load_config(args)
    target = Angle2D(args.target_x, args.target_y)
    write_angle = Angle2D(*cfg.mode_set().write_angle_urad)
    fibers = _fiber_grid(args, cfg)
    checksum = cfg.checksum()

    # baseline pass, no compensation: one run, every fiber as a reference
    refs = [
        _make_reference(cfg.camera, "stokes", f, args.fiber_radius) for f in fibers
    ]
    accs = [analysis.MomentAccumulator.empty(cfg.camera, r) for r in refs]
    for frame in scattering.iter_simulated_frames(cfg):
        analysis.accumulate_many(accs, frame)
    baseline_fits = []
    for acc in accs:
        cmap = analysis.correlation_map(acc, cfg.camera, cfg.run.seed, checksum)
        baseline_fits.append(analysis.locate_twin_spot(cmap))
    fit_failed = any(not f.converged for f in baseline_fits)

    good = [i for i, f in enumerate(baseline_fits) if f.converged]
    slope = intercept = float("nan")
    if len(good) >= 2:
        ys = np.array([fibers[i].theta_y for i in good])
        ts = np.array([baseline_fits[i].center_y_urad for i in good])
        coeffs = np.polyfit(ys, ts, 1)
        slope, intercept = float(coeffs[0]), float(coeffs[1])

    # compensated passes: one run per fiber at its solved readout tilt
    rows = []
    any_unreachable = False
    for i, fiber in enumerate(fibers):
        cmd = control.compensating_readout(fiber, write_angle, target, cfg.chain, cfg.geometry)
        row = {
            "fiber": i,
            "stokes_x_urad": fiber.theta_x,
            "stokes_y_urad": fiber.theta_y,
            "reachable": cmd.reachable,
            "drive_freq_hz": cmd.drive_freq_hz,
            "readout_x_urad": cmd.theta_read.theta_x,
            "readout_y_urad": cmd.theta_read.theta_y,
            "baseline_twin_y_urad": baseline_fits[i].center_y_urad
            if baseline_fits[i].converged
            else float("nan"),
            "twin_x_urad": float("nan"),
            "twin_y_urad": float("nan"),
            "fwhm_x_urad": float("nan"),
            "fwhm_y_urad": float("nan"),
            "target_dist_urad": float("nan"),
            "within_quarter_fwhm": False,
            "note": cmd.note,
        }
        if not cmd.reachable:
            any_unreachable = True
            rows.append(row)
            continue
        run_cfg = cfg.with_seed(cfg.run.seed + 1000 * (i + 1))
        acc = analysis.MomentAccumulator.empty(cfg.camera, refs[i])
        for frame in scattering.iter_simulated_frames(run_cfg, schedule=cmd.theta_read):
            analysis.accumulate(acc, frame)
        cmap = analysis.correlation_map(acc, cfg.camera, run_cfg.run.seed, checksum)
        fit = analysis.locate_twin_spot(cmap)
        if not fit.converged:
            fit_failed = True
            rows.append(row)
            continue
        dist = float(np.hypot(fit.center_x_urad - target.theta_x, fit.center_y_urad - target.theta_y))
        fwhm = 0.5 * (fit.fwhm_x_urad + fit.fwhm_y_urad)
        row.update(
            twin_x_urad=fit.center_x_urad,
            twin_y_urad=fit.center_y_urad,
            fwhm_x_urad=fit.fwhm_x_urad,
            fwhm_y_urad=fit.fwhm_y_urad,
            target_dist_urad=dist,
            within_quarter_fwhm=bool(dist < fwhm / 4.0),
        )
        rows.append(row)

    if args.out:
        _write_steer_report(args.out, rows, slope, intercept, cfg.run.seed, checksum, target)
    print(f"baseline conjugate slope along y: {slope:.6f} (intercept {intercept:.2f} urad)")
    for row in rows:
        if not row["reachable"]:
            print(
                f"fiber {row['fiber']} at ({row['stokes_x_urad']:.2f}, "
                f"{row['stokes_y_urad']:.2f}) urad: UNREACHABLE ({row['note']})"
            )
        elif np.isnan(row["twin_y_urad"]):
            print(f"fiber {row['fiber']}: fit failed")
        else:
            verdict = "ok" if row["within_quarter_fwhm"] else "MISSED"
            print(
                f"fiber {row['fiber']} at ({row['stokes_x_urad']:.2f}, "
                f"{row['stokes_y_urad']:.2f}) urad: twin at "
                f"({row['twin_x_urad']:.2f}, {row['twin_y_urad']:.2f}) urad, "
                f"{row['target_dist_urad']:.2f} urad from target [{verdict}]"
            )
    if any_unreachable:
        return EXIT_UNREACHABLE
    if fit_failed:
        return EXIT_FIT_FAILED
    return EXIT_OK


_STEER_COLUMNS = (
    "fiber",
    "stokes_x_urad",
    "stokes_y_urad",
    "reachable",
    "drive_freq_hz",
    "readout_x_urad",
    "readout_y_urad",
    "baseline_twin_y_urad",
    "twin_x_urad",
    "twin_y_urad",
    "fwhm_x_urad",
    "fwhm_y_urad",
    "target_dist_urad",
    "within_quarter_fwhm",
    "note",
)


def _write_steer_report(path, rows, slope, intercept, seed, checksum, target: Angle2D) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(
            f"# seed={seed} config_checksum={checksum:016x} "
            f"target=({target.theta_x!r},{target.theta_y!r}) "
            f"baseline_slope={slope!r} baseline_intercept={intercept!r}\n"
        )
        fh.write(",".join(_STEER_COLUMNS) + "\n")
        for row in rows:
            fh.write(
                ",".join(
                    str(int(v)) if isinstance(v, (bool, np.bool_)) else str(v)
                    for v in (row[c] for c in _STEER_COLUMNS)
                )
                + "\n"
            )


# ---------------------------------------------------------------------------
# herald


def cmd_herald(args) -> int:
    cfg = _load_config(args)
    sweep = [int(m) for m in args.sweep_m.split(",")] if args.sweep_m else [cfg.herald.modes]
    rows = []
    for modes in sweep:
        hc = dataclasses.replace(cfg.herald, modes=modes)
        stats = control.run_herald_protocol(hc, args.shots, cfg.run.seed)
        # per-mode probability of at least one *detected* excitation; equals
        # hc.p when the detector is ideal
        zeta_eff = hc.zeta * hc.eta_detect
        closed = control.herald_probability(modes, zeta_eff / (1.0 + zeta_eff))
        rows.append((modes, hc.p, stats, closed))
        print(
            f"M={modes}: herald rate {stats.heralds / stats.shots:.5f} "
            f"(closed form {closed:.5f}), success_prob {stats.success_prob:.5f}, "
            f"multi|herald {stats.multi_given_herald:.5f}"
        )
    if args.out:
        with open(args.out, "w", encoding="ascii") as fh:
            fh.write(f"# seed={cfg.run.seed} config_checksum={cfg.checksum():016x}\n")
            fh.write(
                "modes,p,shots,heralds,routed_successes,multi_excitation_events,"
                "success_prob,multi_given_herald,closed_form_herald_prob\n"
            )
            for modes, p, stats, closed in rows:
                fh.write(
                    f"{modes},{p!r},{stats.shots},{stats.heralds},"
                    f"{stats.routed_successes},{stats.multi_excitation_events},"
                    f"{stats.success_prob!r},{stats.multi_given_herald!r},{closed!r}\n"
                )
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ramanmem",
        description="Multimode Raman memory simulator: thermal speckle frames, "
        "correlation maps, readout steering, herald statistics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, frames: bool = True) -> None:
        p.add_argument("--config", help="INI-style config file (defaults built in)")
        p.add_argument("--seed", type=int, help="override the run seed")
        if frames:
            p.add_argument("--frames", type=int, help="override the frame count")

    p_sim = sub.add_parser("simulate", help="render a frame stack to a binary file")
    common(p_sim)
    p_sim.add_argument("--out", required=True, help="output stack path (.rmns)")
    p_sim.add_argument("--schedule", help="per-shot readout schedule CSV")
    p_sim.set_defaults(func=cmd_simulate)

    p_cor = sub.add_parser("correlate", help="correlation map against a reference angle")
    common(p_cor)
    p_cor.add_argument("--stack", help="existing stack file (otherwise simulate)")
    p_cor.add_argument("--ref-x", type=float, default=0.0, help="reference angle x, urad")
    p_cor.add_argument("--ref-y", type=float, default=0.0, help="reference angle y, urad")
    p_cor.add_argument(
        "--ref-pane", choices=analysis.PANES, default="stokes", help="pane holding the reference"
    )
    p_cor.add_argument(
        "--ref-radius", type=float, default=0.0,
        help="virtual fiber radius in urad (0 = single pixel)",
    )
    p_cor.add_argument("--out", required=True, help="output prefix for CSV/PGM/fit files")
    p_cor.set_defaults(func=cmd_correlate)

    p_steer = sub.add_parser(
        "steer", help="solve and verify readout tilts that park twins on one target"
    )
    common(p_steer)
    p_steer.add_argument("--target-x", type=float, default=54.0, help="target angle x, urad")
    p_steer.add_argument("--target-y", type=float, default=6.0, help="target angle y, urad")
    p_steer.add_argument("--fibers", type=int, default=5, help="number of Stokes fibers")
    p_steer.add_argument(
        "--fiber-span", type=float, default=300.0,
        help="spread of fiber y positions, urad (centred on 0)",
    )
    p_steer.add_argument(
        "--fiber-x", type=float, default=None,
        help="fiber column x, urad (default: the column the y axis can serve)",
    )
    p_steer.add_argument(
        "--fiber-radius", type=float, default=0.0,
        help="reference fiber radius in urad (0 = single pixel)",
    )
    p_steer.add_argument("--out", help="per-fiber report CSV")
    p_steer.set_defaults(func=cmd_steer)

    p_her = sub.add_parser("herald", help="Monte Carlo herald statistics")
    common(p_her, frames=False)
    p_her.add_argument("--shots", type=int, default=100_000, help="number of shots")
    p_her.add_argument("--sweep-m", help="comma-separated mode counts, e.g. 10,100,1000")
    p_her.add_argument("--out", help="statistics CSV")
    p_her.set_defaults(func=cmd_herald)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
