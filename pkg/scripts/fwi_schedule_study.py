"""Progressive vs all-at-once observation schedules for waveform inversion.

Builds seeded two-blob binary-velocity instances on a desk-scale mesh,
generates sensor observations with the differentiable reference stepper,
then recovers the velocity field twice per instance: once growing the
observed-step prefix every `period` iterations and once fitting all
steps from the start.  Prints per-seed field MSEs and the win count.

Usage:
    python scripts/fwi_schedule_study.py [--seeds 5] [--nodes 150]
                                         [--period 120] [--iters 1800]
"""

import argparse
import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from meshinvert import inverse as I
from meshinvert import mesh as M
from meshinvert import prior as P
from meshinvert import tensor as T
from meshinvert import util


def two_blob_velocity(msh, rng, c_lo=0.5, c_hi=1.0):
    """Two slow disks in a fast background, centers drawn per seed."""
    c = np.full(msh.num_nodes, c_hi)
    for _ in range(2):
        center = rng.uniform(0.25, 0.75, size=2)
        radius = rng.uniform(0.10, 0.16)
        inside = np.linalg.norm(msh.nodes - center, axis=1) < radius
        c[inside] = c_lo
    return c


def pulse(msh, center=(0.30, 0.35), width=0.10):
    d2 = np.sum(np.square(msh.nodes - np.asarray(center)), axis=1)
    u0 = np.exp(-d2 / (2.0 * width * width))
    u0[msh.boundary_mask] = 0.0
    return u0


def observe(forward, u0, c, sensors):
    tape = T.Tape()
    roll = forward.run(tape, tape.constant(u0[:, None]),
                       tape.constant(np.zeros_like(u0)[:, None]),
                       tape.constant(c[:, None]), int(sensors.times.max()))
    u_steps = np.stack([roll.states[k][0].data[:, 0]
                        for k in range(len(roll.states))])
    return u_steps, I.Observations(I.measure(u_steps, sensors))


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--nodes", type=int, default=150)
    ap.add_argument("--period", type=int, default=120)
    ap.add_argument("--iters", type=int, default=1800)
    ap.add_argument("--lr", type=float, default=1e-2)
    ap.add_argument("--sensors", type=int, default=20)
    args = ap.parse_args()

    times = np.arange(2, 31, 2)
    fspec = P.FieldSpec("velocity")
    wins = 0
    print(f"{'seed':>4}  {'progressive':>12}  {'all-at-once':>12}")
    for run in range(args.seeds):
        seed = util.derive_seed(run, "fwi-study")
        rng = util.rng_for(seed, "instance")
        msh = M.generate_mesh(M.MeshSpec(args.nodes, seed=seed))
        c_true = two_blob_velocity(msh, rng)
        u0 = pulse(msh)
        forward = I.ReferenceForward.from_mesh(msh, c_hi=1.0)
        sensors = I.make_sensors(msh, args.sensors, times, seed=seed)
        _, obs = observe(forward, u0, c_true, sensors)

        mses = {}
        for label, schedule in (
                ("progressive", I.ProgressiveSchedule(period=args.period,
                                                      max_steps=times.size)),
                ("all-at-once", None)):
            problem = I.InverseProblem(
                task="velocity", with_prior=False, schedule=schedule,
                max_iters=args.iters, lr=args.lr, seed=seed)
            res = I.solve(problem, forward, msh, sensors, obs, fspec,
                          u0_known=u0)
            mses[label] = float(np.mean(np.square(res.field - c_true)))
        wins += mses["progressive"] < mses["all-at-once"]
        print(f"{run:>4}  {mses['progressive']:>12.5g}  "
              f"{mses['all-at-once']:>12.5g}", flush=True)
    print(f"progressive wins {wins}/{args.seeds}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
