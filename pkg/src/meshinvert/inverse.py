"""Ill-posed recovery through the unrolled differentiable simulator.

Two tasks share one engine: recovering an initial state from sparse
space-time measurements, and full-waveform inversion of the velocity
field.  Each iteration decodes the unknown (from a latent code through
the trained prior, or directly per-node in the ablation), rolls the
forward model out on a tape, gathers predictions at the sensors, and
takes an Adam step on the observation misfit.

The forward model is pluggable: the trained graph-network surrogate, or
a differentiable re-implementation of the reference stepper (dense
matrices on the tape) for experiments that remove surrogate error.  A
progressive schedule can grow the set of observed time steps during the
run, and a fine-tune window can briefly unfreeze the prior's weights.
"""

from __future__ import annotations

import dataclasses
import math
import struct
import time

import numpy as np

from . import gnn as gnn_mod
from . import mesh as mesh_mod
from . import prior as prior_mod
from . import synth
from . import tensor as T
from . import util
from . import wavesim
from .optim import Adam


class InverseError(Exception):
    pass


TASKS = ("initial", "velocity")
OBJECTIVES = ("mse", "l1")


# ---------------------------------------------------------------------------
# sensors, observations, measurement


@dataclasses.dataclass(frozen=True)
class SensorSet:
    nodes: np.ndarray    # sensor node indices
    times: np.ndarray    # observed surrogate-step indices, increasing, >= 1

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.int64)
        times = np.asarray(self.times, dtype=np.int64)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "times", times)
        if nodes.ndim != 1 or nodes.size == 0:
            raise InverseError("need a 1-D, non-empty sensor index list")
        if times.ndim != 1 or times.size == 0:
            raise InverseError("need a 1-D, non-empty observation time list")
        if times[0] < 1 or np.any(np.diff(times) <= 0):
            raise InverseError(
                "observation steps must be strictly increasing and >= 1")

    def validate_for(self, mesh: mesh_mod.Mesh) -> None:
        n = mesh.nodes.shape[0]
        if self.nodes.min() < 0 or self.nodes.max() >= n:
            raise InverseError("sensor index out of range for this mesh")
        if np.any(mesh.boundary_mask[self.nodes]):
            raise InverseError("sensors must sit on off-boundary nodes")


def make_sensors(mesh: mesh_mod.Mesh, count: int, times,
                 seed: int) -> SensorSet:
    """Randomly place `count` sensors on interior nodes."""
    interior = np.flatnonzero(mesh.interior_mask)
    if count < 1 or count > interior.size:
        raise InverseError(
            f"cannot place {count} sensors on {interior.size} interior nodes")
    rng = util.rng_for(seed, "sensors")
    nodes = np.sort(rng.choice(interior, size=count, replace=False))
    return SensorSet(nodes, np.asarray(times))


@dataclasses.dataclass
class Observations:
    values: np.ndarray          # (n_times, n_sensors)
    noise_std: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, float)
        if self.values.ndim != 2:
            raise InverseError(
                f"observations must be (times, sensors), got "
                f"{self.values.shape}")


def measure(u_steps: np.ndarray, sensors: SensorSet) -> np.ndarray:
    """Gather u at the sensors for each observed step.

    u_steps is (n_steps+1, N) with row k the state after k surrogate
    steps (row 0 = initial).
    """
    u_steps = np.asarray(u_steps, float)
    if sensors.times[-1] >= u_steps.shape[0]:
        raise InverseError(
            f"observation step {int(sensors.times[-1])} beyond trajectory "
            f"of {u_steps.shape[0] - 1} steps")
    return u_steps[sensors.times][:, sensors.nodes]


def make_observations(u_steps: np.ndarray, sensors: SensorSet,
                      noise_std: float = 0.0, seed: int = 0) -> Observations:
    values = measure(u_steps, sensors)
    if noise_std > 0.0:
        rng = util.rng_for(seed, "observations/noise")
        values = values + rng.normal(0.0, noise_std, size=values.shape)
    return Observations(values, noise_std)


def objective_value(pred: np.ndarray, truth: np.ndarray, kind: str) -> float:
    """Plain-array mirror of the tape objective (sum over steps of the
    per-step mean)."""
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    if pred.shape != truth.shape:
        raise InverseError(f"shape mismatch {pred.shape} vs {truth.shape}")
    if kind == "mse":
        return float(np.sum(np.mean(np.square(pred - truth), axis=1)))
    if kind == "l1":
        return float(np.sum(np.mean(np.abs(pred - truth), axis=1)))
    raise InverseError(f"unknown objective {kind!r}")


def _objective_tape(tape, states, sensors: SensorSet, truth: np.ndarray,
                    count: int, kind: str) -> T.Tensor:
    loss = None
    for i in range(count):
        t = int(sensors.times[i])
        u_t = states[t][0]
        pred = T.gather_rows(u_t, sensors.nodes)
        target = tape.constant(truth[i][:, None])
        term = (T.mse_loss(pred, target) if kind == "mse"
                else T.l1_loss(pred, target))
        loss = term if loss is None else T.add(loss, term)
    return loss


# ---------------------------------------------------------------------------
# progressive schedule


@dataclasses.dataclass(frozen=True)
class ProgressiveSchedule:
    initial: int = 1
    period: int = 120           # iterations per added observed step
    max_steps: int = 15

    def __post_init__(self):
        if self.period < 1:
            raise InverseError("schedule period must be >= 1")
        if self.initial < 1 or self.max_steps < self.initial:
            raise InverseError("need 1 <= initial <= max_steps")

    def count(self, iteration: int) -> int:
        if iteration < 0:
            raise InverseError("iteration must be >= 0")
        return min(self.initial + iteration // self.period, self.max_steps)


def active_steps(schedule: ProgressiveSchedule | None, sensors: SensorSet,
                 iteration: int) -> np.ndarray:
    """The observed-step prefix in play at this iteration."""
    if schedule is None:
        return sensors.times
    return sensors.times[:min(schedule.count(iteration), sensors.times.size)]


# ---------------------------------------------------------------------------
# forward models


@dataclasses.dataclass
class GnnForward:
    """Trained surrogate bound to one mesh graph."""

    params: gnn_mod.GnnParams
    norm: gnn_mod.Normalizer
    graph: gnn_mod.GraphData
    name: str = "gnn"

    @staticmethod
    def from_checkpoint(path, mesh: mesh_mod.Mesh) -> "GnnForward":
        params, norm = gnn_mod.load_gnn(path)
        return GnnForward(params, norm, gnn_mod.graph_from_mesh(mesh))

    def run(self, tape: T.Tape, u0: T.Tensor, up0: T.Tensor, c: T.Tensor,
            n_steps: int) -> gnn_mod.Rollout:
        tp = gnn_mod.params_on_tape(tape, self.params)
        bg = gnn_mod.bind_graph(tape, self.graph, self.norm)
        return gnn_mod.rollout(tape, tp, self.params.config, self.norm, bg,
                               u0, up0, c, n_steps)


@dataclasses.dataclass
class ReferenceForward:
    """Differentiable reference stepper: one surrogate step = `stride`
    kick-drift substeps with dense matrices on the tape.

    dt is fixed at construction from the highest admissible velocity, so
    a velocity iterate anywhere in [c_lo, c_hi] stays stable.
    """

    k_dense: np.ndarray
    inv_mass: np.ndarray        # (N, 1)
    interior: np.ndarray        # (N, 1)
    dt: float
    stride: int
    name: str = "reference"

    @staticmethod
    def from_mesh(mesh: mesh_mod.Mesh, c_hi: float, stride: int = 5,
                  dt: float | None = None) -> "ReferenceForward":
        op = wavesim.assemble(mesh, c_hi)
        if dt is None:
            dt = wavesim.max_stable_dt(op)
        inter = mesh.interior_mask.astype(float)[:, None]
        return ReferenceForward(op.stiffness.toarray(),
                                (1.0 / op.mass)[:, None], inter, dt, stride)

    def run(self, tape: T.Tape, u0: T.Tensor, up0: T.Tensor, c: T.Tensor,
            n_steps: int) -> gnn_mod.Rollout:
        kd = tape.constant(self.k_dense)
        inv_m = tape.constant(self.inv_mass)
        inter = tape.constant(self.interior)
        c2 = T.square(c)
        u, up = T.multiply(u0, inter), T.multiply(up0, inter)
        states = [(u, up)]
        marks = []
        for _ in range(n_steps):
            marks.append(tape.mark())
            for _ in range(self.stride):
                ku = T.matmul(kd, u)
                up = T.subtract(up, T.scalar_mul(
                    T.multiply(c2, T.multiply(ku, inv_m)), self.dt))
                u = T.add(u, T.scalar_mul(up, self.dt))
                u = T.multiply(u, inter)
                up = T.multiply(up, inter)
            states.append((u, up))
        return gnn_mod.Rollout(states, marks)


# ---------------------------------------------------------------------------
# the solve loop


@dataclasses.dataclass(frozen=True)
class InverseProblem:
    task: str = "initial"               # "initial" | "velocity"
    objective: str = "mse"
    with_prior: bool = True
    schedule: ProgressiveSchedule | None = None
    max_iters: int = 2000
    lr: float = 1e-2                    # latent / direct-field learning rate
    fine_tune: tuple[int, int] | None = None
    prior_lr: float = 1e-4
    plateau_tol: float = 1e-9
    plateau_window: int = 50
    target_objective: float | None = None
    checkpoint: bool = False            # per-step memory checkpointing
    record_latents: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise InverseError(f"task must be one of {TASKS}")
        if self.objective not in OBJECTIVES:
            raise InverseError(f"objective must be one of {OBJECTIVES}")
        if self.fine_tune is not None:
            if not self.with_prior:
                raise InverseError(
                    "fine-tuning needs a prior (Direct runs have no "
                    "prior parameters)")
            start, end = self.fine_tune
            if start < 0 or end < start:
                raise InverseError(
                    f"fine-tune window must satisfy 0 <= start <= end, "
                    f"got ({start}, {end})")
        if self.max_iters < 0:
            raise InverseError("max_iters must be >= 0")


@dataclasses.dataclass
class SolveResult:
    field: np.ndarray               # recovered unknown at the best iterate
    z: np.ndarray | None            # its latent code (WithPrior)
    prior_params: "prior_mod.PriorParams | None"  # fine-tuned weights, if any
    loss_trace: np.ndarray
    active_trace: np.ndarray        # active observed-step count per iteration
    latent_trace: np.ndarray | None
    best_iter: int
    best_loss: float
    iters: int
    seconds_per_iter: float
    diverged: bool = False


def _init_direct(problem: InverseProblem, fspec: prior_mod.FieldSpec,
                 n_nodes: int) -> np.ndarray:
    if problem.task == "velocity":
        mid = 0.5 * (fspec.c_lo + fspec.c_hi)
        return np.full((n_nodes, 1), mid)
    return np.zeros((n_nodes, 1))


def solve(problem: InverseProblem, forward, mesh: mesh_mod.Mesh,
          sensors: SensorSet, observations: Observations,
          fspec: prior_mod.FieldSpec,
          prior_params: prior_mod.PriorParams | None = None,
          c_known: np.ndarray | None = None,
          u0_known: np.ndarray | None = None) -> SolveResult:
    """Optimize the unknown field against the observations.

    Per iteration: decode the unknown, roll the forward model to the last
    active observed step, gather at the sensors, backpropagate the
    misfit, and step Adam on the latent code (or the raw field).  Prior
    weights additionally move inside the fine-tune window.  Returns the
    best iterate of the largest observed-step regime reached; with no
    schedule there is a single regime and the returned loss never
    exceeds the loss at iteration 0.
    """
    if fspec.kind != problem.task:
        raise InverseError(
            f"field spec kind {fspec.kind!r} does not match task "
            f"{problem.task!r}")
    sensors.validate_for(mesh)
    if observations.values.shape != (sensors.times.size, sensors.nodes.size):
        raise InverseError(
            f"observations shape {observations.values.shape} does not match "
            f"{sensors.times.size} steps x {sensors.nodes.size} sensors")
    if problem.task == "initial":
        if c_known is None:
            raise InverseError("initial-state recovery needs c_known")
        c_known = np.asarray(c_known, float)[:, None]
    else:
        if u0_known is None:
            raise InverseError("velocity recovery needs u0_known")
        u0_known = np.asarray(u0_known, float)[:, None]
    if problem.with_prior and prior_params is None:
        raise InverseError("WithPrior solve needs trained prior parameters")

    n_nodes = mesh.nodes.shape[0]
    mask = prior_mod.field_mask(mesh, fspec)
    mask_col = mask[:, None] if mask is not None else None
    truth = observations.values

    if problem.with_prior:
        if problem.fine_tune is not None:
            # fine-tuning mutates the weights; keep the caller's object intact
            prior_params = prior_params.copy()
        pcfg = prior_params.config
        enc = prior_mod.encode_position(mesh.nodes, pcfg.freqs)
        z = util.rng_for(problem.seed, "solve/z0").normal(
            0.0, 0.01, size=(1, pcfg.latent))
        prior_named = dict(prior_params.named())
        adam_prior = Adam(lr=problem.prior_lr) if problem.fine_tune else None
    else:
        raw = _init_direct(problem, fspec, n_nodes)
    adam = Adam(lr=problem.lr)

    def decode_unknown(tape):
        """Returns (field tensor (N,1), prior tensor dict or None)."""
        if problem.with_prior:
            train_prior_now = problem.fine_tune is not None
            tp = prior_mod.params_on_tape(tape, prior_params,
                                          trainable=train_prior_now)
            z_t = tape.leaf(z, trainable=True)
            enc_t = tape.constant(enc)
            y = prior_mod.decode(tape, tp, pcfg, z_t, enc_t)
            m = tape.constant(mask_col) if mask_col is not None else None
            return prior_mod.transform_decode(tape, y, fspec, m), z_t, tp
        x = tape.leaf(raw, trainable=True)
        if problem.task == "initial":
            field = T.multiply(x, tape.constant(mask_col))
        else:
            field = x
        return field, x, None

    loss_trace: list[float] = []
    active_trace: list[int] = []
    latent_trace: list[np.ndarray] = []
    best_loss = math.inf
    best_field: np.ndarray | None = None
    best_z: np.ndarray | None = None
    best_prior: prior_mod.PriorParams | None = None
    best_iter = -1
    best_regime = 0
    since_improve = 0
    diverged = False
    fine_tuned = False
    t_start = time.perf_counter()
    iters_done = 0

    for it in range(problem.max_iters):
        steps_now = active_steps(problem.schedule, sensors, it)
        count = steps_now.size
        n_roll = int(steps_now[-1])
        final_regime = (problem.schedule is None
                        or count == min(problem.schedule.max_steps,
                                        sensors.times.size))
        tape = T.Tape()
        try:
            field, handle, prior_tp = decode_unknown(tape)
            if problem.task == "initial":
                u0 = field
                up0 = tape.constant(np.zeros((n_nodes, 1)))
                c_t = tape.constant(c_known)
            else:
                u0 = tape.constant(u0_known)
                up0 = tape.constant(np.zeros((n_nodes, 1)))
                c_t = field
            ro = forward.run(tape, u0, up0, c_t, n_roll)
            loss = _objective_tape(tape, ro.states, sensors, truth,
                                   count, problem.objective)
            loss_val = float(loss.data)
            field_val = field.data[:, 0].copy()
            if problem.checkpoint and ro.marks:
                T.checkpoint_segment(tape, ro.marks)
            grads = T.backward(tape, loss)
        except T.NumericError:
            diverged = True
            break
        if not math.isfinite(loss_val):
            diverged = True
            break

        loss_trace.append(loss_val)
        active_trace.append(count)
        if problem.with_prior and problem.record_latents:
            latent_trace.append(z[0].copy())

        # best iterate is tracked within the largest regime reached; a
        # regime change resets the comparison (losses over different
        # observed-step sets are not comparable)
        if count > best_regime:
            best_regime = count
            best_loss = math.inf
            since_improve = 0
        if loss_val < best_loss - problem.plateau_tol:
            since_improve = 0
        else:
            since_improve += 1
        if loss_val < best_loss:
            best_loss = loss_val
            best_field = field_val
            best_z = z[0].copy() if problem.with_prior else None
            best_iter = it
            if fine_tuned:
                best_prior = prior_params.copy()

        iters_done = it + 1
        if (problem.target_objective is not None and final_regime
                and loss_val < problem.target_objective):
            break
        if final_regime and since_improve >= problem.plateau_window:
            break

        # parameter updates
        if problem.with_prior:
            adam.step({"z": z}, {"z": grads[handle]})
            in_window = (problem.fine_tune is not None
                         and problem.fine_tune[0] <= it < problem.fine_tune[1])
            if in_window:
                adam_prior.step(prior_named,
                                {k: grads[t] for k, t in prior_tp.items()})
                fine_tuned = True
        else:
            adam.step({"x": raw}, {"x": grads[handle]})
            if problem.task == "velocity":
                np.clip(raw, fspec.c_lo, fspec.c_hi, out=raw)

    elapsed = time.perf_counter() - t_start

    if best_field is None:
        # zero iterations (or immediate divergence): report the init decode
        tape = T.Tape()
        field, _, _ = decode_unknown(tape)
        best_field = field.data[:, 0].copy()
        best_z = z[0].copy() if problem.with_prior else None
        best_loss = math.nan
        best_iter = -1

    return SolveResult(
        field=best_field,
        z=best_z,
        prior_params=best_prior,
        loss_trace=np.asarray(loss_trace),
        active_trace=np.asarray(active_trace, dtype=np.int64),
        latent_trace=(np.asarray(latent_trace)
                      if latent_trace and problem.record_latents else None),
        best_iter=best_iter,
        best_loss=best_loss,
        iters=iters_done,
        seconds_per_iter=elapsed / max(iters_done, 1),
        diverged=diverged,
    )


# ---------------------------------------------------------------------------
# evaluation and metrics


@dataclasses.dataclass
class Metrics:
    sample_id: str
    task: str
    with_prior: bool
    forward_model: str
    field_mse: float
    traj_mse: float
    iters: int
    seconds_per_iter: float
    rel_error_curve: np.ndarray | None = None


def relative_error_curve(u_pred: np.ndarray, u_true: np.ndarray,
                         floor: float = 1e-12) -> np.ndarray:
    """Accumulated relative error per step: the Frobenius norm of the
    prediction error over steps 0..t, over the same norm of the truth."""
    u_pred, u_true = np.asarray(u_pred, float), np.asarray(u_true, float)
    if u_pred.shape != u_true.shape:
        raise InverseError(
            f"trajectory shapes differ: {u_pred.shape} vs {u_true.shape}")
    err = np.cumsum(np.sum(np.square(u_pred - u_true), axis=1))
    ref = np.cumsum(np.sum(np.square(u_true), axis=1))
    return np.sqrt(err / np.maximum(ref, floor))


def evaluate(sample_id: str, problem: InverseProblem, forward_name: str,
             result: SolveResult, truth_field: np.ndarray,
             u_pred: np.ndarray, u_true: np.ndarray,
             timing: bool = True) -> Metrics:
    """Field MSE of the recovered unknown plus trajectory agreement over
    the assimilation window.  timing=False zeroes the wall-clock column
    so reruns are byte-identical."""
    truth_field = np.asarray(truth_field, float)
    field_mse = float(np.mean(np.square(result.field - truth_field)))
    traj_mse = float(np.mean(np.square(np.asarray(u_pred) -
                                       np.asarray(u_true))))
    return Metrics(
        sample_id=sample_id,
        task=problem.task,
        with_prior=problem.with_prior,
        forward_model=forward_name,
        field_mse=field_mse,
        traj_mse=traj_mse,
        iters=result.iters,
        seconds_per_iter=result.seconds_per_iter if timing else 0.0,
        rel_error_curve=relative_error_curve(u_pred, u_true),
    )


CSV_HEADER = ("sample_id,task,with_prior,forward_model,field_mse,traj_mse,"
              "iters,seconds_per_iter")


def write_metrics_csv(path, rows: list[Metrics]) -> None:
    lines = [CSV_HEADER]
    for m in rows:
        lines.append("%s,%s,%d,%s,%.17g,%.17g,%d,%.17g" % (
            m.sample_id, m.task, int(m.with_prior), m.forward_model,
            m.field_mse, m.traj_mse, m.iters, m.seconds_per_iter))
    util.atomic_write_text(path, "\n".join(lines) + "\n")


def read_metrics_csv(path) -> list[Metrics]:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise util.ArtifactFormatError(
            f"{path}: line 1: expected header {CSV_HEADER!r}")
    rows = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 8:
            raise util.ArtifactFormatError(
                f"{path}: line {ln}: expected 8 fields, got {len(parts)}")
        try:
            rows.append(Metrics(parts[0], parts[1], bool(int(parts[2])),
                                parts[3], float(parts[4]), float(parts[5]),
                                int(parts[6]), float(parts[7])))
        except ValueError as exc:
            raise util.ArtifactFormatError(
                f"{path}: line {ln}: {exc}") from None
    return rows


# ---------------------------------------------------------------------------
# solution record file


def save_solution(path, problem: InverseProblem, result: SolveResult,
                  metrics: Metrics | None = None) -> None:
    with util.atomic_open(path) as f:
        util.write_magic(f, util.MAGIC_SOLUTION)
        f.write(struct.pack("<B", TASKS.index(problem.task)))
        f.write(struct.pack("<B", OBJECTIVES.index(problem.objective)))
        f.write(struct.pack("<B", int(problem.with_prior)))
        sch = problem.schedule
        f.write(struct.pack("<3q", *(
            (sch.initial, sch.period, sch.max_steps) if sch
            else (-1, -1, -1))))
        ft = problem.fine_tune if problem.fine_tune else (-1, -1)
        f.write(struct.pack("<2q", *ft))
        f.write(struct.pack("<q", problem.max_iters))
        f.write(struct.pack("<2d", problem.lr, problem.prior_lr))
        f.write(struct.pack("<Q", problem.seed))
        f.write(struct.pack("<qdq", result.best_iter, result.best_loss,
                            result.iters))
        f.write(struct.pack("<d", result.seconds_per_iter))
        f.write(struct.pack("<B", int(result.diverged)))
        util.write_array(f, result.field)
        util.write_array(f, result.loss_trace)
        util.write_array(f, result.active_trace)
        has_z = result.latent_trace is not None
        f.write(struct.pack("<B", int(has_z)))
        if has_z:
            util.write_array(f, result.latent_trace)
        has_m = metrics is not None
        f.write(struct.pack("<B", int(has_m)))
        if has_m:
            f.write(struct.pack("<2d", metrics.field_mse, metrics.traj_mse))
            f.write(struct.pack("<qd", metrics.iters,
                                metrics.seconds_per_iter))


def load_solution(path) -> dict:
    """Solution record as a plain dict (config scalars, arrays, metrics)."""
    with open(path, "rb") as f:
        util.read_magic(f, util.MAGIC_SOLUTION)
        task = TASKS[struct.unpack("<B", f.read(1))[0]]
        objective = OBJECTIVES[struct.unpack("<B", f.read(1))[0]]
        with_prior = bool(struct.unpack("<B", f.read(1))[0])
        sch = struct.unpack("<3q", f.read(24))
        ft = struct.unpack("<2q", f.read(16))
        (max_iters,) = struct.unpack("<q", f.read(8))
        lr, prior_lr = struct.unpack("<2d", f.read(16))
        (seed,) = struct.unpack("<Q", f.read(8))
        best_iter, best_loss, iters = struct.unpack("<qdq", f.read(24))
        (seconds_per_iter,) = struct.unpack("<d", f.read(8))
        diverged = bool(struct.unpack("<B", f.read(1))[0])
        field = util.read_array(f)
        loss_trace = util.read_array(f)
        active_trace = util.read_array(f)
        out = {
            "task": task, "objective": objective, "with_prior": with_prior,
            "schedule": None if sch[0] < 0 else sch,
            "fine_tune": None if ft[0] < 0 else tuple(ft),
            "max_iters": max_iters, "lr": lr, "prior_lr": prior_lr,
            "seed": seed, "best_iter": best_iter, "best_loss": best_loss,
            "iters": iters, "seconds_per_iter": seconds_per_iter,
            "diverged": diverged, "field": field,
            "loss_trace": loss_trace, "active_trace": active_trace,
            "latent_trace": None, "metrics": None,
        }
        if struct.unpack("<B", f.read(1))[0]:
            out["latent_trace"] = util.read_array(f)
        if struct.unpack("<B", f.read(1))[0]:
            field_mse, traj_mse = struct.unpack("<2d", f.read(16))
            m_iters, spi = struct.unpack("<qd", f.read(16))
            out["metrics"] = {"field_mse": field_mse, "traj_mse": traj_mse,
                              "iters": m_iters, "seconds_per_iter": spi}
    return out
