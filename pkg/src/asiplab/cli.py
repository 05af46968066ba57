"""Command-line entry point.

    asiplab <task> --config cfg.json [--seed N] [--threads N] [--out DIR] [--plots]

Tasks: simulate, delta, tail, lyapunov, variance, asip, deviations, report.
Exit codes: 0 success, 2 config schema violation, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from .config import TASKS, parse_config
from .errors import ConfigError, LabError
from .runner import run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asiplab",
        description="Monte Carlo laboratory for strong approximation of "
                    "dependent sums and matrix cocycles",
    )
    sub = parser.add_subparsers(dest="task", required=True)
    for task in TASKS:
        p = sub.add_parser(task, help=f"run the {task} task")
        p.add_argument("--config", required=True, help="path to a JSON config")
        p.add_argument("--seed", type=int, default=None, help="64-bit seed override")
        p.add_argument("--threads", type=int, default=None, help="worker threads")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--plots", action="store_true", default=None,
                       help="also write SVG charts")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(text, task=args.task, seed=args.seed, out=args.out,
                           threads=args.threads, plots=args.plots)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        result = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except LabError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    for key in sorted(result.summary):
        print(f"{key}={result.summary[key]}")
    return result.status


if __name__ == "__main__":
    sys.exit(main())
