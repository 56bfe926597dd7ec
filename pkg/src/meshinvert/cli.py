"""Command line entry point.

    meshinvert <task> [--config FILE] [--set key=value ...]
                      [--seed N] [--jobs N] [--out DIR]

Tasks run pipeline stages against a shared output directory; see
harness.TASKS.  Exit codes: 0 success, 1 runtime failure, 2 bad usage,
bad config, or missing input.  MESHINVERT_LOG selects the log level
(error, warn, info, debug).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import harness
from .config import ConfigError, load_config

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    name = os.environ.get("MESHINVERT_LOG", "warn").lower()
    level = _LOG_LEVELS.get(name)
    if level is None:
        print(f"meshinvert: MESHINVERT_LOG={name!r} not one of "
              + ", ".join(_LOG_LEVELS), file=sys.stderr)
        level = logging.WARNING
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meshinvert",
        description="mesh-based wave surrogate and latent-space inversion")
    sub = parser.add_subparsers(dest="task", metavar="task", required=True)
    for task in harness.TASKS:
        p = sub.add_parser(task, help=f"run the {task} stage")
        p.add_argument("--config", default=None,
                       help="key = value config file")
        p.add_argument("--set", dest="overrides", action="append",
                       default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the master seed")
        p.add_argument("--jobs", type=int, default=None,
                       help="worker threads for data generation")
        p.add_argument("--out", default="runs/out",
                       help="shared output directory (default runs/out)")
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    overrides = {}
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep:
            print(f"meshinvert: --set needs KEY=VALUE, got {item!r}",
                  file=sys.stderr)
            return 2
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.jobs is not None:
        overrides["jobs"] = str(args.jobs)
    try:
        cfg = load_config(args.config, overrides)
        harness.run(args.task, cfg, args.out)
    except (ConfigError, harness.MissingInputError) as exc:
        print(f"meshinvert: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"meshinvert: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - single reporting point
        logging.getLogger("meshinvert").debug("traceback", exc_info=True)
        print(f"meshinvert: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
