"""Reverse-mode automatic differentiation on a flat operation tape.

Tensors are float64 numpy arrays of rank <= 2 (scalars, vectors, matrices)
owned by a Tape.  Every operation appends one record to the tape; backward
walks the records once in reverse.  The op set is deliberately small: the
simulators and networks in this package are built from exactly these pieces,
so gradients of unrolled multi-step rollouts come for free.

Checkpointing: ``checkpoint_segment`` splits the tape into segments, drops
the activations interior to each segment, and lets backward recompute them
segment by segment.  Recomputation replays the same records on the same
inputs, so gradients are bit-identical to the uncheckpointed run while peak
live-activation count stays near one segment's worth.

A Tape is single-threaded; independent Tapes may run concurrently.  Leaf
arrays are copied in, so later mutation of the caller's buffers never
corrupts recorded state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class TensorError(Exception):
    pass


class ShapeError(TensorError):
    pass


class NumericError(TensorError):
    pass


def _as_value(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim > 2:
        raise ShapeError(f"rank {arr.ndim} > 2 not supported (shape {arr.shape})")
    return arr


# ---------------------------------------------------------------------------
# op registry


@dataclass(frozen=True)
class OpDef:
    forward: Callable
    backward: Callable
    deterministic: bool = True


OPS: dict[str, OpDef] = {}


def _register(name: str, forward, backward) -> None:
    OPS[name] = OpDef(forward, backward)


def _binary_shapes(name, a, b):
    # equal shapes, or b a broadcastable row (1, C) against a (N, C)
    if a.shape == b.shape:
        return
    if a.ndim == 2 and b.shape == (1, a.shape[1]):
        return
    raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(b_shape, grad):
    if grad.shape == b_shape:
        return grad
    return grad.sum(axis=0, keepdims=True)


_register(
    "add",
    lambda ins, aux: ins[0] + ins[1],
    lambda ins, out, g, aux: (g, _reduce_to(ins[1].shape, g)),
)
_register(
    "subtract",
    lambda ins, aux: ins[0] - ins[1],
    lambda ins, out, g, aux: (g, -_reduce_to(ins[1].shape, g)),
)
_register(
    "multiply",
    lambda ins, aux: ins[0] * ins[1],
    lambda ins, out, g, aux: (g * ins[1], _reduce_to(ins[1].shape, g * ins[0])),
)
_register(
    "scalar_mul",
    lambda ins, aux: ins[0] * aux,
    lambda ins, out, g, aux: (g * aux,),
)
_register(
    "matmul",
    lambda ins, aux: ins[0] @ ins[1],
    lambda ins, out, g, aux: (g @ ins[1].T, ins[0].T @ g),
)


def _concat_fwd(ins, aux):
    return np.concatenate(ins, axis=1)


def _concat_bwd(ins, out, g, aux):
    grads = []
    col = 0
    for a in ins:
        grads.append(g[:, col : col + a.shape[1]])
        col += a.shape[1]
    return tuple(grads)


_register("concat", _concat_fwd, _concat_bwd)


def _slice_fwd(ins, aux):
    start, stop = aux
    return ins[0][:, start:stop].copy()


def _slice_bwd(ins, out, g, aux):
    start, stop = aux
    gx = np.zeros_like(ins[0])
    gx[:, start:stop] = g
    return (gx,)


_register("slice_cols", _slice_fwd, _slice_bwd)

_register(
    "relu",
    lambda ins, aux: np.maximum(ins[0], 0.0),
    lambda ins, out, g, aux: (g * (ins[0] > 0.0),),
)


def _sigmoid_fwd(ins, aux):
    x = ins[0]
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_register(
    "sigmoid",
    _sigmoid_fwd,
    lambda ins, out, g, aux: (g * out * (1.0 - out),),
)
_register(
    "sin",
    lambda ins, aux: np.sin(ins[0]),
    lambda ins, out, g, aux: (g * np.cos(ins[0]),),
)
_register(
    "cos",
    lambda ins, aux: np.cos(ins[0]),
    lambda ins, out, g, aux: (-g * np.sin(ins[0]),),
)
_register(
    "sum",
    lambda ins, aux: np.asarray(ins[0].sum()),
    lambda ins, out, g, aux: (np.full_like(ins[0], float(g)),),
)
_register(
    "mean",
    lambda ins, aux: np.asarray(ins[0].mean()),
    lambda ins, out, g, aux: (np.full_like(ins[0], float(g) / ins[0].size),),
)
_register(
    "square",
    lambda ins, aux: np.square(ins[0]),
    lambda ins, out, g, aux: (2.0 * g * ins[0],),
)
_register(
    "sqrt",
    lambda ins, aux: np.sqrt(ins[0]),
    lambda ins, out, g, aux: (g * 0.5 / out,),
)


def _gather_fwd(ins, aux):
    return ins[0][aux].copy()


def _scatter_rows(values: np.ndarray, idx: np.ndarray, num: int) -> np.ndarray:
    # bincount is much faster than np.add.at for repeated row indices
    if values.ndim == 1:
        return np.bincount(idx, weights=values, minlength=num)[:num]
    cols = values.shape[1]
    flat = (idx[:, None] * cols + np.arange(cols)[None, :]).ravel()
    out = np.bincount(flat, weights=values.ravel(), minlength=num * cols)
    return out[: num * cols].reshape(num, cols)


def _gather_bwd(ins, out, g, aux):
    return (_scatter_rows(g, aux, ins[0].shape[0]),)


_register("gather_rows", _gather_fwd, _gather_bwd)


def _scatter_fwd(ins, aux):
    idx, num = aux
    return _scatter_rows(ins[0], idx, num)


def _scatter_bwd(ins, out, g, aux):
    idx, _ = aux
    return (g[idx].copy(),)


_register("scatter_sum", _scatter_fwd, _scatter_bwd)

_register(
    "mse_loss",
    lambda ins, aux: np.asarray(np.mean(np.square(ins[0] - ins[1]))),
    lambda ins, out, g, aux: (
        (2.0 * float(g) / ins[0].size) * (ins[0] - ins[1]),
        (2.0 * float(g) / ins[0].size) * (ins[1] - ins[0]),
    ),
)
_register(
    "l1_loss",
    lambda ins, aux: np.asarray(np.mean(np.abs(ins[0] - ins[1]))),
    lambda ins, out, g, aux: (
        (float(g) / ins[0].size) * np.sign(ins[0] - ins[1]),
        (float(g) / ins[0].size) * np.sign(ins[1] - ins[0]),
    ),
)
_register(
    "squared_l2_norm",
    lambda ins, aux: np.asarray(np.sum(np.square(ins[0]))),
    lambda ins, out, g, aux: (2.0 * float(g) * ins[0],),
)


# ---------------------------------------------------------------------------
# tape


class Tensor:
    __slots__ = ("tape", "idx", "shape")

    def __init__(self, tape: "Tape", idx: int, shape: tuple):
        self.tape = tape
        self.idx = idx
        self.shape = shape

    @property
    def data(self) -> np.ndarray:
        val = self.tape._values[self.idx]
        if val is None:
            raise TensorError(
                "value was dropped by a checkpoint plan; read it before "
                "checkpointing or keep the node at a segment boundary"
            )
        return val

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return subtract(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return multiply(self, other)
        return scalar_mul(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(idx={self.idx}, shape={self.shape})"


class _Record:
    __slots__ = ("name", "inputs", "out", "aux")

    def __init__(self, name, inputs, out, aux):
        self.name = name
        self.inputs = inputs
        self.out = out
        self.aux = aux


class Tape:
    """Append-only record of operations plus the values they produced."""

    def __init__(self):
        self._values: list[np.ndarray | None] = []
        self._records: list[_Record] = []
        self._producer: list[int] = []  # record index per node, -1 for leaves
        self._trainable: list[int] = []
        self._plan: "CheckpointPlan | None" = None
        self._live = 0
        self.peak_live = 0

    # -- construction -----------------------------------------------------

    def _new_node(self, value: np.ndarray, producer: int) -> int:
        idx = len(self._values)
        self._values.append(value)
        self._producer.append(producer)
        self._live += 1
        if self._live > self.peak_live:
            self.peak_live = self._live
        return idx

    def leaf(self, data, trainable: bool = False) -> Tensor:
        value = _as_value(data).copy()
        idx = self._new_node(value, -1)
        if trainable:
            self._trainable.append(idx)
        return Tensor(self, idx, value.shape)

    def constant(self, data) -> Tensor:
        return self.leaf(data, trainable=False)

    def mark(self) -> int:
        """Current record count; use as a checkpoint segment boundary."""
        return len(self._records)

    @property
    def num_records(self) -> int:
        return len(self._records)

    def live_values(self) -> int:
        return self._live

    def _values_ref(self, t: "Tensor") -> np.ndarray:
        val = self._values[t.idx]
        if val is None:
            raise TensorError("operand value was dropped by a checkpoint plan")
        return val

    # -- op application ----------------------------------------------------

    def _apply(self, name: str, tensors: Sequence[Tensor], aux=None) -> Tensor:
        if self._plan is not None:
            raise TensorError("tape is frozen by a checkpoint plan")
        for t in tensors:
            if t.tape is not self:
                raise TensorError(f"{name}: tensor belongs to a different tape")
        ins = [self._values[t.idx] for t in tensors]
        out = OPS[name].forward(ins, aux)
        if not np.all(np.isfinite(out)):
            raise NumericError(
                f"op '{name}' (record {len(self._records)}) produced "
                "non-finite values"
            )
        out_idx = self._new_node(out, len(self._records))
        self._records.append(
            _Record(name, tuple(t.idx for t in tensors), out_idx, aux)
        )
        return Tensor(self, out_idx, out.shape)

    # -- checkpoint bookkeeping ---------------------------------------------

    def _drop(self, idx: int) -> None:
        if self._values[idx] is not None:
            self._values[idx] = None
            self._live -= 1

    def _restore(self, idx: int, value: np.ndarray) -> None:
        if self._values[idx] is None:
            self._live += 1
            if self._live > self.peak_live:
                self.peak_live = self._live
        self._values[idx] = value

    def replay_check(self) -> float:
        """Recompute every record from leaves; max abs deviation (0 = exact)."""
        vals = [v.copy() if v is not None else None for v in self._values]
        worst = 0.0
        for rec in self._records:
            ins = [vals[i] for i in rec.inputs]
            out = OPS[rec.name].forward(ins, rec.aux)
            ref = self._values[rec.out]
            if ref is not None:
                diff = np.max(np.abs(out - ref)) if out.size else 0.0
                worst = max(worst, float(diff))
            vals[rec.out] = out
        return worst


# ---------------------------------------------------------------------------
# functional op wrappers


def _tape_of(*tensors: Tensor) -> Tape:
    return tensors[0].tape


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("add", a.tape._values_ref(a), b.tape._values_ref(b))
    return _tape_of(a)._apply("add", (a, b))


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("subtract", a.tape._values_ref(a), b.tape._values_ref(b))
    return _tape_of(a)._apply("subtract", (a, b))


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("multiply", a.tape._values_ref(a), b.tape._values_ref(b))
    return _tape_of(a)._apply("multiply", (a, b))


def scalar_mul(a: Tensor, scalar: float) -> Tensor:
    return _tape_of(a)._apply("scalar_mul", (a,), float(scalar))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.tape._values_ref(a), b.tape._values_ref(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {av.shape} and {bv.shape}")
    return _tape_of(a)._apply("matmul", (a, b))


def concat(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    rows = None
    for t in tensors:
        v = t.tape._values_ref(t)
        if v.ndim != 2:
            raise ShapeError(f"concat: rank-2 tensors only, got shape {v.shape}")
        if rows is None:
            rows = v.shape[0]
        elif v.shape[0] != rows:
            raise ShapeError(
                f"concat: row mismatch {v.shape[0]} vs {rows} (last axis only)"
            )
    return _tape_of(*tensors)._apply("concat", tuple(tensors))


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    av = a.tape._values_ref(a)
    if av.ndim != 2:
        raise ShapeError(f"slice_cols: rank-2 tensor required, got {av.shape}")
    if not (0 <= start <= stop <= av.shape[1]):
        raise ShapeError(
            f"slice_cols: range [{start}, {stop}) out of bounds for {av.shape}"
        )
    return _tape_of(a)._apply("slice_cols", (a,), (start, stop))


def relu(a: Tensor) -> Tensor:
    return _tape_of(a)._apply("relu", (a,))


def sigmoid(a: Tensor) -> Tensor:
    return _tape_of(a)._apply("sigmoid", (a,))


def sin(a: Tensor) -> Tensor:
    return _tape_of(a)._apply("sin", (a,))


def cos(a: Tensor) -> Tensor:
    return _tape_of(a)._apply("cos", (a,))


def tsum(a: Tensor) -> Tensor:
    return _tape_of(a)._apply("sum", (a,))


def tmean(a: Tensor) -> Tensor:
    return _tape_of(a)._apply("mean", (a,))


def square(a: Tensor) -> Tensor:
    return _tape_of(a)._apply("square", (a,))


def sqrt(a: Tensor) -> Tensor:
    return _tape_of(a)._apply("sqrt", (a,))


def gather_rows(a: Tensor, indices) -> Tensor:
    av = a.tape._values_ref(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows: 1-D index array required, got {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= av.shape[0]):
        raise ShapeError(
            f"gather_rows: index out of range for {av.shape[0]} rows"
        )
    return _tape_of(a)._apply("gather_rows", (a,), idx)


def scatter_sum(a: Tensor, indices, num_segments: int) -> Tensor:
    av = a.tape._values_ref(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or idx.shape[0] != av.shape[0]:
        raise ShapeError(
            f"scatter_sum: index shape {idx.shape} does not match "
            f"{av.shape[0]} rows"
        )
    if idx.size and (idx.min() < 0 or idx.max() >= num_segments):
        raise ShapeError(
            f"scatter_sum: index out of range for {num_segments} segments"
        )
    return _tape_of(a)._apply("scatter_sum", (a,), (idx, int(num_segments)))


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    _binary_shapes("mse_loss", pred.tape._values_ref(pred),
                   target.tape._values_ref(target))
    return _tape_of(pred)._apply("mse_loss", (pred, target))


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    _binary_shapes("l1_loss", pred.tape._values_ref(pred),
                   target.tape._values_ref(target))
    return _tape_of(pred)._apply("l1_loss", (pred, target))


def squared_l2_norm(a: Tensor) -> Tensor:
    return _tape_of(a)._apply("squared_l2_norm", (a,))


# ---------------------------------------------------------------------------
# checkpointing


@dataclass
class CheckpointPlan:
    boundaries: tuple[int, ...]  # record indices, includes 0 and num_records
    keep: np.ndarray             # bool per node: value retained after forward
    segment_of: np.ndarray       # segment index per record
    dropped: int


def checkpoint_segment(tape: Tape, boundaries: Sequence[int]) -> CheckpointPlan:
    """Split the tape into segments and drop interior activations.

    ``boundaries`` are record indices (as returned by ``Tape.mark``).  Values
    produced and exclusively consumed inside one segment are dropped now and
    recomputed on demand during backward.  Leaves, values crossing segment
    boundaries, and terminal outputs (the loss, user-facing results) are kept.
    """
    n_rec = len(tape._records)
    bounds = sorted(set(int(b) for b in boundaries) | {0, n_rec})
    if bounds[0] < 0 or bounds[-1] > n_rec:
        raise TensorError(f"checkpoint boundaries out of range [0, {n_rec}]")
    for name in {r.name for r in tape._records}:
        if not OPS[name].deterministic:
            raise TensorError(f"non-deterministic op '{name}' cannot be replayed")

    edges = np.asarray(bounds[1:], dtype=np.int64)
    segment_of = np.searchsorted(edges, np.arange(n_rec), side="right")

    n_nodes = len(tape._values)
    keep = np.zeros(n_nodes, dtype=bool)
    consumed = np.zeros(n_nodes, dtype=bool)
    for r_idx, rec in enumerate(tape._records):
        seg = segment_of[r_idx]
        for i in rec.inputs:
            consumed[i] = True
            prod = tape._producer[i]
            if prod < 0 or segment_of[prod] != seg:
                keep[i] = True
    for idx in range(n_nodes):
        if tape._producer[idx] < 0 or not consumed[idx]:
            keep[idx] = True

    dropped = 0
    for idx in range(n_nodes):
        if not keep[idx] and tape._values[idx] is not None:
            tape._drop(idx)
            dropped += 1

    plan = CheckpointPlan(tuple(bounds), keep, segment_of, dropped)
    tape._plan = plan
    return plan


# ---------------------------------------------------------------------------
# backward


class Gradients:
    """Gradient lookup for trainable leaves of one backward pass."""

    def __init__(self, table: dict[int, np.ndarray]):
        self._table = table

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        try:
            return self._table[tensor.idx]
        except KeyError:
            raise KeyError(
                "no gradient recorded for this tensor (only trainable leaves "
                "are populated)"
            ) from None

    def __contains__(self, tensor: Tensor) -> bool:
        return tensor.idx in self._table


def _segment_ranges(tape: Tape):
    if tape._plan is None:
        return [(0, len(tape._records))]
    b = tape._plan.boundaries
    return [(b[i], b[i + 1]) for i in range(len(b) - 1)]


def backward(tape: Tape, loss: Tensor) -> Gradients:
    """Reverse accumulation from a scalar loss.

    Each record is visited exactly once.  Every trainable leaf gets a
    gradient entry; leaves not on the path to the loss get zeros.
    """
    if loss.tape is not tape:
        raise TensorError("loss tensor belongs to a different tape")
    loss_val = tape._values[loss.idx]
    if loss_val is None or loss_val.ndim != 0:
        raise ShapeError(
            f"backward: loss must be a stored scalar, got shape "
            f"{None if loss_val is None else loss_val.shape}"
        )

    adjoint: dict[int, np.ndarray] = {loss.idx: np.ones(())}
    plan = tape._plan
    segments = _segment_ranges(tape)
    # peak_live reports the backward-phase high-water mark: on a plain tape
    # every forward value is still live here; under a checkpoint plan only
    # boundaries plus the segment being replayed are
    tape.peak_live = tape._live

    for start, stop in reversed(segments):
        if plan is not None:
            # replay this segment's dropped forward values
            for rec in tape._records[start:stop]:
                if tape._values[rec.out] is None:
                    ins = [tape._values[i] for i in rec.inputs]
                    tape._restore(rec.out, OPS[rec.name].forward(ins, rec.aux))
        for r_idx in range(stop - 1, start - 1, -1):
            rec = tape._records[r_idx]
            g = adjoint.pop(rec.out, None)
            if g is None:
                continue
            ins = [tape._values[i] for i in rec.inputs]
            in_grads = OPS[rec.name].backward(ins, tape._values[rec.out], g, rec.aux)
            for node, gi in zip(rec.inputs, in_grads):
                if gi is None:
                    continue
                if not np.all(np.isfinite(gi)):
                    raise NumericError(
                        f"non-finite adjoint from op '{rec.name}' "
                        f"(record {r_idx})"
                    )
                acc = adjoint.get(node)
                adjoint[node] = gi if acc is None else acc + gi
        if plan is not None:
            # drop the replayed values again to keep the live set small
            for rec in tape._records[start:stop]:
                if not plan.keep[rec.out]:
                    tape._drop(rec.out)

    table: dict[int, np.ndarray] = {}
    for idx in tape._trainable:
        g = adjoint.get(idx)
        if g is None:
            g = np.zeros_like(tape._values[idx])
        table[idx] = g
    return Gradients(table)


# ---------------------------------------------------------------------------
# finite-difference verification


def grad_check(f, inputs: Sequence[np.ndarray], step: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f(tape, *leaf_tensors) -> scalar Tensor`` must be a pure function of
    its inputs.  The error for each component is
    ``|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)``.  Callers probing relu
    networks should resample inputs that land within ~1e-4 of a kink, where
    the central difference itself is invalid.
    """
    points = [_as_value(p).copy() for p in inputs]

    tape = Tape()
    leaves = [tape.leaf(p, trainable=True) for p in points]
    out = f(tape, *leaves)
    out_val = out.data
    if out_val.ndim != 0:
        raise ShapeError(f"grad_check: f must return a scalar, got {out_val.shape}")
    grads = backward(tape, out)

    def eval_at(mod_points) -> float:
        t = Tape()
        ls = [t.leaf(p) for p in mod_points]
        return float(f(t, *ls).data)

    worst = 0.0
    for k, p in enumerate(points):
        g_ad = np.asarray(grads[leaves[k]], dtype=float).ravel()
        flat = p.ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            f_plus = eval_at(points)
            flat[j] = orig - step
            f_minus = eval_at(points)
            flat[j] = orig
            g_fd = (f_plus - f_minus) / (2.0 * step)
            denom = max(1.0, abs(g_ad[j]), abs(g_fd))
            worst = max(worst, abs(g_ad[j] - g_fd) / denom)
    return worst
