"""Command line entry point: ``cutdg <experiment> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
import warnings

import numpy as np

from .harness import EXPERIMENTS, ConfigError, load_config, run_experiment
from .mesh import EmptyActiveMeshError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cutdg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--geometry", choices=["sphere", "torus"])
        p.add_argument("--degree", type=int)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--levels", help="comma separated refinement levels, e.g. 0,1,2")
        p.add_argument("--delta-samples", dest="delta_samples", type=int)
        p.add_argument("--gamma0", type=float)
        p.add_argument("--gamma1", type=float)
        p.add_argument("--gamman", type=float)
        p.add_argument("--solver", choices=["direct", "bicgstab"])
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k) for k in
                 ("geometry", "degree", "epsilon", "levels", "delta_samples", "gamma0",
                  "gamma1", "gamman", "solver", "out", "seed")}
    try:
        config = load_config(args.config, **overrides)
    except (ConfigError, OSError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore", RuntimeWarning)
            path = run_experiment(args.command, config)
    except (EmptyActiveMeshError, np.linalg.LinAlgError, FloatingPointError, RuntimeError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
