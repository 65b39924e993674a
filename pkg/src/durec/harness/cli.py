"""Command-line entry point.

    durec pretrain --config exp.ini --out runs/a
    durec sweep    --config exp.ini --out runs/a
    durec retrieve --config exp.ini --out runs/a
    durec evaluate --config exp.ini --out runs/a
    durec simulate --config exp.ini --out runs/a
    durec report   --config exp.ini --out runs/a

Without ``--config`` the built-in defaults are used.  ``--seed`` overrides the
global seed in the config.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline as pl
from .config import ConfigError, ExperimentConfig, load_config

STAGES = {
    "pretrain": pl.stage_pretrain,
    "sweep": pl.stage_sweep,
    "retrieve": pl.stage_retrieve,
    "evaluate": pl.stage_evaluate,
    "simulate": pl.run_online,
    "report": pl.stage_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="durec", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI-style experiment config")
        p.add_argument("--seed", type=int, help="override the global seed")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
    except (OSError, ConfigError) as exc:
        print(f"durec: config: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    try:
        if args.command == "simulate":
            echo = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
            result = pl.run_online(cfg, args.out, progress=echo)
            sys.stdout.write(pl.sim.summary_table(result.rows()))
        elif args.command == "report":
            print(pl.stage_report(cfg, args.out))
        else:
            STAGES[args.command](cfg, args.out)
    except pl.StageError as exc:
        print(f"durec: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
