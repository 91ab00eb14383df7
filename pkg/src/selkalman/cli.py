"""Command line entry point: ``selkalman simulate|invert|report --config <path>``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

import numpy as np

from . import experiment as ex
from .gaussian import NumericalError
from .inference import ResolutionError
from .recursion import MemoryGuardError
from .selection import ChainInitError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("selkalman")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selkalman", description=__doc__)
    parser.add_argument("command", choices=["simulate", "invert", "report"])
    parser.add_argument("--config", required=True, help="YAML experiment config")
    parser.add_argument("--model", choices=list(ex.MODELS), help="invert one model only (default: both)")
    parser.add_argument("--horizon", type=int, help="invert one horizon only (default: all config horizons)")
    parser.add_argument("--seed", type=int, help="override the root seed (simulate)")
    parser.add_argument("--out", help=f"output directory (overrides ${ex.OUTPUT_ROOT_ENV} and config)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = ex.load_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        out = ex.resolve_output(cfg, args.out)
        if args.command == "simulate":
            ex.cmd_simulate(cfg, out)
            log.info("simulated truth and observations into %s", out)
        elif args.command == "invert":
            models = (args.model,) if args.model else ex.MODELS
            horizons = (args.horizon,) if args.horizon is not None else None
            manifest = ex.cmd_invert(cfg, out, models, horizons)
            sys.stdout.write(ex.rmse_table_text(manifest))
        else:
            ex.cmd_report(cfg, out)
            sys.stdout.write((out / "report" / "rmse_table.txt").read_text())
    except ex.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, np.linalg.LinAlgError, ChainInitError, ResolutionError, MemoryGuardError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ex.ManifestError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main() -> None:
    sys.exit(run())
