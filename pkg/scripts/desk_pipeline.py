"""Run the full desk-scale pipeline into one output directory.

Stages: gen-mesh, gen-data, train-gnn, train-prior, solve, eval, report.
Equivalent to invoking the CLI once per stage with a shared --out; kept
as a script so a single command reproduces every artifact of a run.

Usage:
    python scripts/desk_pipeline.py --out runs/desk [--config configs/desk.cfg]
                                    [--seed 0] [--set key=value ...]
"""

import argparse
import pathlib
import sys
import time

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from meshinvert import harness
from meshinvert.config import load_config


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--config", default=None,
                    help="key = value config file (defaults otherwise)")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--set", dest="overrides", action="append", default=[],
                    metavar="KEY=VALUE")
    ap.add_argument("--from", dest="start", default=harness.TASKS[0],
                    choices=harness.TASKS,
                    help="resume from this stage (artifacts before it must "
                    "already exist in --out)")
    args = ap.parse_args()

    overrides = {}
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep:
            ap.error(f"--set needs KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    cfg = load_config(args.config, overrides)

    stages = harness.TASKS[harness.TASKS.index(args.start):]
    for task in stages:
        t0 = time.time()
        print(f"== {task} ==", flush=True)
        artifacts = harness.run(task, cfg, args.out)
        dt = time.time() - t0
        print(f"   {dt:7.1f}s  {len(artifacts)} artifact(s)")
        for path in artifacts:
            print(f"           {path}")
    print(f"done: {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
