"""Command-line entry point: run one experiment preset and write its CSV."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError, EigenfedError
from .experiments import EXPERIMENTS, emit_csv, parse_config, run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eigenfed",
        description="Distributed eigenspace estimation experiments.",
    )
    parser.add_argument("experiment", choices=EXPERIMENTS, help="experiment preset")
    parser.add_argument("--config", help="INI config file with [experiment]/[model]/[output]")
    parser.add_argument("--d", help="ambient dimension")
    parser.add_argument("--r", help="subspace dimension")
    parser.add_argument("--m", help="worker count (comma list where the preset sweeps m)")
    parser.add_argument("--n", help="samples per worker (comma list where the preset sweeps n)")
    parser.add_argument("--model", help="model kind: m1 or m2")
    parser.add_argument("--estimators", help="comma list of estimator tags")
    parser.add_argument("--n-iter", dest="n_iter", help="refinement iterations")
    parser.add_argument("--reps", dest="repetitions", help="repetitions per grid point")
    parser.add_argument("--seed", help="master seed")
    parser.add_argument("--out", help="output CSV path")
    parser.add_argument("--timeout-s", dest="timeout_s", help="per-phase worker timeout")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    overrides = {
        "d": args.d,
        "r": args.r,
        "m": args.m,
        "n": args.n,
        "model": args.model,
        "estimators": args.estimators,
        "n_iter": args.n_iter,
        "repetitions": args.repetitions,
        "seed": args.seed,
        "out": args.out,
        "timeout_s": args.timeout_s,
    }
    try:
        config = parse_config(args.experiment, args.config, overrides)
    except ConfigError as exc:
        print(f"eigenfed: {exc}", file=sys.stderr)
        return 2
    try:
        result = run_experiment(config)
        emit_csv(result, config.out_path)
    except Exception as exc:  # runtime failure, config was fine
        if isinstance(exc, ConfigError):
            print(f"eigenfed: {exc}", file=sys.stderr)
            return 2
        if not isinstance(exc, EigenfedError):
            logging.getLogger("eigenfed").exception("unexpected failure")
        print(f"eigenfed: {exc}", file=sys.stderr)
        return 3
    print(config.out_path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
