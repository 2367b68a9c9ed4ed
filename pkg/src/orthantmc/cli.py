"""Command-line entry point: ``solve --config file.toml [overrides]``."""

from __future__ import annotations

import argparse
import json
import sys

from .config import MODES, load_config
from .errors import ConfigParseError, ConfigValidationError, OrthantError
from .harness import EXIT_INPUT_ERROR, EXIT_NUMERICAL_FAILURE, run


def build_parser():
    parser = argparse.ArgumentParser(
        prog="solve",
        description=(
            "Monte Carlo and finite-difference solver for parabolic Robin "
            "problems on the nonnegative orthant"
        ),
    )
    parser.add_argument("--config", required=True, help="TOML or JSON config file")
    parser.add_argument("--mode", choices=MODES, help="override config mode")
    parser.add_argument("--paths", type=int, help="override budgets.n_paths")
    parser.add_argument("--dt", type=float, help="override budgets.dt")
    parser.add_argument("--seed", type=int, help="override master seed")
    parser.add_argument("--out", help="override output directory")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.mode is not None:
            cfg.mode = args.mode
        if args.paths is not None:
            if args.paths <= 0:
                raise ConfigValidationError("paths", "must be positive")
            cfg.budgets.n_paths = args.paths
        if args.dt is not None:
            if args.dt <= 0:
                raise ConfigValidationError("dt", "must be positive")
            cfg.budgets.dt = args.dt
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigValidationError("seed", "must be nonnegative")
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out_dir = args.out
    except (ConfigParseError, ConfigValidationError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return EXIT_INPUT_ERROR
    try:
        code, report = run(cfg)
    except OrthantError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return EXIT_NUMERICAL_FAILURE
    summary = {
        "exit_code": code,
        "mode": cfg.mode,
        "results": len(report.get("results", [])),
        "checks_passed": sum(1 for c in report.get("checks", []) if c.get("pass")),
        "checks_total": len(report.get("checks", [])),
    }
    print(json.dumps(summary))
    return code


if __name__ == "__main__":
    sys.exit(main())
