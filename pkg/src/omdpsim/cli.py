"""Batch command-line interface.

Subcommands: ``run`` executes one configured simulation and renders its
report; ``solve`` prints the equilibrium of the configured instance;
``sweep`` fans a config out over a seed range; ``report`` re-renders a
persisted run directory.  Exit codes: 0 success, 2 configuration error,
3 numerical error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import (
    ConfigurationError,
    ErgodicityError,
    InvalidOccupancyError,
    NumericalError,
    SolverError,
)
from .harness import load_config, render_report, run, solve_summary, sweep

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _parse_seed_range(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..", 1)
        seeds = list(range(int(lo), int(hi) + 1))
    else:
        seeds = [int(s) for s in text.split(",") if s]
    if not seeds:
        raise ConfigurationError(f"empty seed range {text!r}")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="omdpsim",
        description="Simulate online-MDP learning against strategic adversaries.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one configured run")
    p_run.add_argument("config", help="TOML or JSON run config")
    p_run.add_argument("--outdir", help="override the configured output directory")

    p_solve = sub.add_parser("solve", help="print the equilibrium of the instance")
    p_solve.add_argument("config", help="TOML or JSON run config")

    p_sweep = sub.add_parser("sweep", help="run a config across a seed range")
    p_sweep.add_argument("config", help="TOML or JSON run config")
    p_sweep.add_argument("--seeds", required=True, help="range a..b or list a,b,c")
    p_sweep.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p_sweep.add_argument("--outdir", required=True, help="sweep output directory")

    p_report = sub.add_parser("report", help="re-render a persisted run directory")
    p_report.add_argument("rundir", help="directory containing records.npz")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            config = load_config(args.config)
            summary = run(config, outdir=args.outdir)
            print(json.dumps(summary, indent=2, sort_keys=True))
        elif args.command == "solve":
            config = load_config(args.config)
            print(json.dumps(solve_summary(config), indent=2, sort_keys=True))
        elif args.command == "sweep":
            config = load_config(args.config)
            seeds = _parse_seed_range(args.seeds)
            path = sweep(config, seeds, jobs=args.jobs, outdir=args.outdir)
            print(path)
        elif args.command == "report":
            summary = render_report(args.rundir)
            print(json.dumps(summary, indent=2, sort_keys=True))
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ErgodicityError, InvalidOccupancyError, SolverError, NumericalError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
