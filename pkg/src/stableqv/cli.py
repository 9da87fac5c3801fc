"""Command-line interface.

Subcommands map to experiment kinds (``experiment`` reads the kind from
the config file; ``qv`` recomputes a QV table from an exported path
file).  Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, StableQVError
from .harness import load_config, run_experiment

_KIND_BY_COMMAND = {
    "simulate": "simulate",
    "qv": "qv-table",
    "spectrum": "spectrum",
    "limit-sample": "limit-distribution",
    "subsample": "subsample-coverage",
    "experiment": None,
}

_COMMAND_HELP = {
    "simulate": "simulate jump paths and their realised QV tables",
    "qv": "recompute the realised QV table from an exported path file",
    "spectrum": "eigenvalues and gaps of simulated QV matrices",
    "limit-sample": "draw from the matrix-valued limit law",
    "subsample": "subsampling confidence intervals and their coverage",
    "experiment": "run the experiment kind named in the config file",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stableqv",
        description="Simulation and inference for the quadratic variation "
        "of multivariate symmetric stable processes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in _COMMAND_HELP.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument(
            "--config", required=True, help="JSON experiment configuration file"
        )
        p.add_argument(
            "--seed", type=int, default=None, help="override the config master seed"
        )
        p.add_argument("--out", default=".", help="output directory (default: .)")
        p.add_argument(
            "--threads",
            type=int,
            default=1,
            help="worker threads for replications; results are identical "
            "for any thread count (default: 1)",
        )
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config)
        kind = _KIND_BY_COMMAND[args.command]
        if kind is not None:
            cfg["kind"] = kind
        if args.seed is not None:
            cfg["seed"] = args.seed
        manifest = run_experiment(cfg, args.out, threads=args.threads)
        print(f"wrote {len(manifest.outputs)} result files to {args.out}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StableQVError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # unexpected failure still exits nonzero
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
