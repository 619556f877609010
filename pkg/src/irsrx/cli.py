"""Command-line entry point: ``irsrx <command> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, SystemConfig, load_config
from .harness import METHODS, ExperimentSpec, emit_outputs, run_sweep

# Sweep grids used by ``reproduce``.
FIGURES = {
    "fig3": dict(sweep_name="snr_db", values=(0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0),
                 methods=("parkron", "ls", "krf")),
    "fig4": dict(sweep_name="snr_db", values=(0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0),
                 methods=("parkron", "krf")),
    "fig6": dict(sweep_name="Tp", values=(4, 8, 16, 32), methods=("parkron",)),
    "fig7": dict(sweep_name="N", values=(16, 32, 64), methods=("parkron",)),
}


def _values(text, kind):
    return tuple(kind(v) for v in text.split(",") if v.strip())


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file with SystemConfig fields")
    common.add_argument("--runs", type=int, default=200, help="Monte Carlo runs per point")
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    common.add_argument("--out", default="results", help="output directory")
    common.add_argument("--methods", default=None, help="comma list from " + ",".join(METHODS))
    common.add_argument("--noiseless", action="store_true", help="disable all noise")
    common.add_argument("--workers", type=int, default=1, help="worker processes")
    common.add_argument("--nmse-frames", choices=("all", "first"), default="all",
                        help="frames averaged in the Stage-1 NMSE")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="irsrx", description="IRS tensor receiver simulator")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="single scenario")
    s = sub.add_parser("sweep-snr", parents=[common], help="sweep the SNR in dB")
    s.add_argument("--values", default="0,10,20,30,40")
    s = sub.add_parser("sweep-pilots", parents=[common], help="sweep Tp at fixed block length")
    s.add_argument("--values", default="4,8,16,32")
    s = sub.add_parser("sweep-irs", parents=[common], help="sweep N with T0 = Q*N")
    s.add_argument("--values", default="16,32,64")
    s = sub.add_parser("reproduce", parents=[common], help="regenerate a figure's data")
    s.add_argument("figure", choices=sorted(FIGURES))
    return p


def build_spec(args):
    overrides = {"noiseless": True} if args.noiseless else {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    config = load_config(args.config, **overrides) if args.config else SystemConfig(**overrides)
    kw = {}
    if args.command == "sweep-snr":
        kw = dict(sweep_name="snr_db", values=_values(args.values, float))
    elif args.command == "sweep-pilots":
        kw = dict(sweep_name="Tp", values=_values(args.values, int))
    elif args.command == "sweep-irs":
        kw = dict(sweep_name="N", values=_values(args.values, int))
    elif args.command == "reproduce":
        kw = dict(FIGURES[args.figure])
    if args.methods:
        kw["methods"] = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    return ExperimentSpec(
        config=config, runs=args.runs, seed=config.seed, workers=args.workers,
        nmse_frames=args.nmse_frames, **kw,
    )


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = build_spec(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"irsrx: error: {exc}", file=sys.stderr)
        return 2
    result = run_sweep(spec)
    paths = emit_outputs(result.rows, args.out)
    for value, reason in result.skipped:
        print(f"skipped {spec.sweep_name}={value}: {reason}", file=sys.stderr)
    print(f"wrote {len(paths)} files to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
