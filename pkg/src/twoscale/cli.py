"""Command line entry point: ``twoscale run|preset|audit|predict``."""

from __future__ import annotations

import argparse
import logging
import sys

from .diagnostics import predicted_empty_zone_radius, predicted_equilibrium_distance
from .population import SimulationError
from .scenarios import PRESETS, ConfigError, audit_output, load_config, preset, run


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", required=True, help="output directory (created if missing)")
    p.add_argument("--steps", type=int, help="override the number of steps")
    p.add_argument("--dt", type=float, help="override the time step")
    p.add_argument("--frame-stride", type=int, help="override the frame stride")
    p.add_argument("--allow-boundary-loss", action="store_true",
                   help="record and discard mass leaving the domain instead of aborting")
    p.add_argument("--entropy-audit", action=argparse.BooleanOptionalAction, default=None,
                   help="force the entropy audit on or off")
    p.add_argument("--pgm", action="store_true", help="also write 8-bit PGM images of density frames")
    p.add_argument("--rho-scale", type=float, help="density mapped to white in PGM images")
    p.add_argument("--workers", type=int, default=1, help="threads for velocity evaluation")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twoscale", description="Two-scale crowd dynamics simulator.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario config file")
    p.add_argument("config")
    _add_run_options(p)

    p = sub.add_parser("preset", help="run a built-in reference scenario")
    p.add_argument("name", choices=sorted(PRESETS))
    _add_run_options(p)

    p = sub.add_parser("audit", help="re-check conservation and entropy from a run's output files")
    p.add_argument("dir")

    p = sub.add_parser("predict", help="closed-form predictions")
    what = p.add_subparsers(dest="what", required=True)
    q = what.add_parser("eq", help="equilibrium distance of two opposing particles")
    q.add_argument("--F", type=float, default=1.0)
    q.add_argument("--Rr", type=float, default=4.0)
    q.add_argument("--speed", type=float, default=1.34)
    q = what.add_parser("zone", help="empty-zone radius around an intruder")
    q.add_argument("--M", type=float, default=60.0)
    q.add_argument("--F", type=float, default=0.03)
    q.add_argument("--Rr", type=float, default=4.0)
    q.add_argument("--speed", type=float, default=1.34)
    return parser


def _run(args, cfg) -> int:
    cfg = cfg.with_overrides(steps=args.steps, dt=args.dt, frame_stride=args.frame_stride,
                             entropy_audit=args.entropy_audit)
    if args.allow_boundary_loss:
        cfg = cfg.with_overrides(allow_boundary_loss=True)
    try:
        res = run(cfg, args.out, pgm=args.pgm, rho_scale=args.rho_scale, workers=args.workers)
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {len(res.frames)} frames to {args.out} (final step {res.final.n}, t={res.final.t:g})")
    if res.audit is not None:
        a = res.audit
        print(f"entropy audit: min dS = {a['min_delta']:.6g}, at dt/2: {a['min_delta_half_dt']:.6g}, "
              f"K = {a['K']:.6g}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return _run(args, load_config(args.config))
        if args.command == "preset":
            return _run(args, preset(args.name))
        if args.command == "audit":
            rep = audit_output(args.dir)
            for msg in rep.problems:
                print(msg)
            print(f"{'ok' if rep.ok else 'FAILED'}: {rep.checked_frames} frames checked")
            return 0 if rep.ok else 1
        if args.what == "eq":
            print(repr(predicted_equilibrium_distance(args.F, args.Rr, args.speed)))
        else:
            print(repr(predicted_empty_zone_radius(args.M, args.F, args.Rr, args.speed)))
        return 0
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
