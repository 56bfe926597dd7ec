"""Graph-network surrogate for the wave stepper.

Encoder-Processor-Decoder on the mesh graph: node and edge features are
normalized and lifted to width-H latents, S rounds of residual message
passing update them, and a decoder emits per-node increments [du, du']
that an additive integrator applies to the state.  Boundary nodes are
projected back to zero after every step, so the hard Dirichlet wall
survives the learned dynamics.

Training supervises single-step transitions between consecutive stored
snapshots (each spanning ``stride`` reference sub-steps), with Gaussian
noise injected into the input state to stabilise closed-loop rollouts.
All forwards run on the tape from :mod:`meshinvert.tensor`, so the same
code path serves training, evaluation, and the inverse solves that
differentiate through unrolled predictions.
"""

from __future__ import annotations

import dataclasses
import math
import os
import struct

import numpy as np

from . import mesh as mesh_mod
from . import tensor as T
from . import util
from .optim import Adam, exp_decay
from .wavesim import DatasetManifest, load_trajectory


class GnnError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration and parameters


@dataclasses.dataclass(frozen=True)
class GnnConfig:
    hidden: int = 64            # latent width H
    steps: int = 6              # message-passing rounds S
    mlp_layers: int = 2         # hidden layers per MLP (width = hidden)
    node_features: int = 5      # [u, u', c, onehot(interior, boundary)]
    edge_features: int = 3      # [dx, dy, |d|]
    out_features: int = 2       # [du, du']
    noise_std: float = 1e-3     # training input noise, normalized units

    def __post_init__(self):
        if self.hidden < 4:
            raise GnnError(f"hidden width must be >= 4, got {self.hidden}")
        if self.steps < 1:
            raise GnnError(f"need >= 1 message-passing step, got {self.steps}")
        if self.mlp_layers < 1:
            raise GnnError("mlp_layers must be >= 1")
        for name in ("node_features", "edge_features", "out_features"):
            if getattr(self, name) < 1:
                raise GnnError(f"{name} must be >= 1")


def _mlp_dims(in_dim: int, out_dim: int, width: int, hidden: int):
    """Affine layer (in, out) sizes for an MLP with `hidden` relu layers."""
    dims = [in_dim] + [width] * hidden + [out_dim]
    return list(zip(dims[:-1], dims[1:]))


@dataclasses.dataclass
class GnnParams:
    """All weights, grouped per MLP; arrays are shared with the optimizer."""

    config: GnnConfig
    edge_encoder: list[np.ndarray]
    node_encoder: list[np.ndarray]
    edge_blocks: list[list[np.ndarray]]
    node_blocks: list[list[np.ndarray]]
    decoder: list[np.ndarray]

    def named(self) -> dict[str, np.ndarray]:
        """name -> array in declaration order (the serialization order)."""
        out: dict[str, np.ndarray] = {}

        def put(prefix, arrays):
            for i, a in enumerate(arrays):
                kind = "w" if i % 2 == 0 else "b"
                out[f"{prefix}.{kind}{i // 2}"] = a

        put("edge_encoder", self.edge_encoder)
        put("node_encoder", self.node_encoder)
        for s, arrays in enumerate(self.edge_blocks):
            put(f"edge_block{s}", arrays)
        for s, arrays in enumerate(self.node_blocks):
            put(f"node_block{s}", arrays)
        put("decoder", self.decoder)
        return out

    def copy(self) -> "GnnParams":
        c = dataclasses.replace(self)
        c.edge_encoder = [a.copy() for a in self.edge_encoder]
        c.node_encoder = [a.copy() for a in self.node_encoder]
        c.edge_blocks = [[a.copy() for a in blk] for blk in self.edge_blocks]
        c.node_blocks = [[a.copy() for a in blk] for blk in self.node_blocks]
        c.decoder = [a.copy() for a in self.decoder]
        return c


def _init_mlp(rng, in_dim, out_dim, width, hidden, zero_last=False):
    arrays = []
    dims = _mlp_dims(in_dim, out_dim, width, hidden)
    for i, (fan_in, fan_out) in enumerate(dims):
        if zero_last and i == len(dims) - 1:
            arrays.append(np.zeros((fan_in, fan_out)))
        else:
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            arrays.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        arrays.append(np.zeros((1, fan_out)))
    return arrays


def init_params(config: GnnConfig, seed: int) -> GnnParams:
    """Glorot-uniform weights, zero biases, zero final decoder affine.

    The zero head makes the untrained model predict the mean update, so
    the starting loss equals the variance of the normalized targets.
    """
    rng = util.rng_for(seed, "gnn/init")
    h, d = config.hidden, config.mlp_layers
    return GnnParams(
        config=config,
        edge_encoder=_init_mlp(rng, config.edge_features, h, h, d),
        node_encoder=_init_mlp(rng, config.node_features, h, h, d),
        edge_blocks=[_init_mlp(rng, 3 * h, h, h, d) for _ in range(config.steps)],
        node_blocks=[_init_mlp(rng, 2 * h, h, h, d) for _ in range(config.steps)],
        decoder=_init_mlp(rng, h, config.out_features, h, d, zero_last=True),
    )


STD_FLOOR = 1e-8


@dataclasses.dataclass
class Normalizer:
    """Per-feature mean/std of node inputs, edge inputs, and targets."""

    node_mean: np.ndarray
    node_std: np.ndarray
    edge_mean: np.ndarray
    edge_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray

    def __post_init__(self):
        for name in ("node_std", "edge_std", "out_std"):
            arr = np.maximum(np.asarray(getattr(self, name), float), STD_FLOOR)
            setattr(self, name, arr)
        for name in ("node_mean", "edge_mean", "out_mean"):
            setattr(self, name, np.asarray(getattr(self, name), float))

    def normalize_nodes(self, feats: np.ndarray) -> np.ndarray:
        return (feats - self.node_mean) / self.node_std

    def normalize_edges(self, feats: np.ndarray) -> np.ndarray:
        return (feats - self.edge_mean) / self.edge_std

    def normalize_out(self, deltas: np.ndarray) -> np.ndarray:
        return (deltas - self.out_mean) / self.out_std


# ---------------------------------------------------------------------------
# dataset plumbing


@dataclasses.dataclass
class GraphData:
    """Static per-mesh structure shared by every snapshot pair on it."""

    senders: np.ndarray
    receivers: np.ndarray
    edge_feats: np.ndarray     # (E, 3) raw [dx, dy, |d|]
    onehot: np.ndarray         # (N, 2) [interior, boundary]
    interior: np.ndarray       # (N, 1) mask, 1.0 off-boundary
    n_nodes: int


def graph_from_mesh(mesh: mesh_mod.Mesh) -> GraphData:
    edges = mesh_mod.build_edges(mesh)
    inter = mesh.interior_mask.astype(float)
    onehot = np.stack([inter, 1.0 - inter], axis=1)
    return GraphData(edges.senders, edges.receivers, edges.features,
                     onehot, inter[:, None], mesh.nodes.shape[0])


@dataclasses.dataclass
class SnapshotPair:
    """One supervised transition: state at t, target increment to t+1."""

    graph: GraphData
    u: np.ndarray          # (N,)
    u_prime: np.ndarray    # (N,)
    c: np.ndarray          # (N,)
    delta: np.ndarray      # (N, 2) = state(t+1) - state(t)


def trajectory_pairs(traj, graph: GraphData) -> list[SnapshotPair]:
    pairs = []
    for k in range(traj.u.shape[0] - 1):
        delta = np.stack([traj.u[k + 1] - traj.u[k],
                          traj.u_prime[k + 1] - traj.u_prime[k]], axis=1)
        pairs.append(SnapshotPair(graph, traj.u[k], traj.u_prime[k],
                                  traj.c, delta))
    return pairs


def load_split(data_dir: str, manifest: DatasetManifest,
               split: str) -> list[SnapshotPair]:
    """Snapshot pairs for one split, sharing one GraphData per mesh."""
    graphs: dict[str, GraphData] = {}
    pairs: list[SnapshotPair] = []
    for entry in manifest.entries(split):
        mesh_file = entry["mesh_file"]
        if mesh_file not in graphs:
            m = mesh_mod.load_mesh(os.path.join(data_dir, mesh_file))
            graphs[mesh_file] = graph_from_mesh(m)
        traj = load_trajectory(os.path.join(data_dir, entry["traj_file"]))
        pairs.extend(trajectory_pairs(traj, graphs[mesh_file]))
    return pairs


def node_features(u, u_prime, c, onehot) -> np.ndarray:
    return np.concatenate([np.asarray(u, float)[:, None],
                           np.asarray(u_prime, float)[:, None],
                           np.asarray(c, float)[:, None], onehot], axis=1)


def compute_normalizer(pairs: list[SnapshotPair]) -> Normalizer:
    if not pairs:
        raise GnnError("cannot compute normalization statistics: no pairs")
    feats = np.concatenate(
        [node_features(p.u, p.u_prime, p.c, p.graph.onehot) for p in pairs])
    deltas = np.concatenate([p.delta for p in pairs])
    seen: set[int] = set()
    edge_chunks = []
    for p in pairs:
        if id(p.graph) not in seen:
            seen.add(id(p.graph))
            edge_chunks.append(p.graph.edge_feats)
    edges = np.concatenate(edge_chunks)
    return Normalizer(feats.mean(0), feats.std(0),
                      edges.mean(0), edges.std(0),
                      deltas.mean(0), deltas.std(0))


def mean_squared_delta(pairs: list[SnapshotPair]) -> float:
    """Baseline for 1-step error: mean squared target increment (raw units)."""
    deltas = np.concatenate([p.delta for p in pairs])
    return float(np.mean(np.square(deltas)))


# ---------------------------------------------------------------------------
# tape forward


def params_on_tape(tape: T.Tape, params: GnnParams,
                   trainable: bool = False) -> dict[str, T.Tensor]:
    if trainable:
        return {k: tape.leaf(v, trainable=True)
                for k, v in params.named().items()}
    return {k: tape.constant(v) for k, v in params.named().items()}


def _mlp(tp: dict[str, T.Tensor], prefix: str, n_affine: int,
         x: T.Tensor) -> T.Tensor:
    h = x
    for i in range(n_affine):
        h = T.add(T.matmul(h, tp[f"{prefix}.w{i}"]), tp[f"{prefix}.b{i}"])
        if i < n_affine - 1:
            h = T.relu(h)
    return h


@dataclasses.dataclass
class BoundGraph:
    """A GraphData bound onto one tape (constants plus index arrays)."""

    tape: T.Tape
    senders: np.ndarray
    receivers: np.ndarray
    n_nodes: int
    onehot: T.Tensor
    interior: T.Tensor
    edge_feats_n: T.Tensor   # normalized edge features


def bind_graph(tape: T.Tape, graph: GraphData, norm: Normalizer) -> BoundGraph:
    return BoundGraph(tape, graph.senders, graph.receivers, graph.n_nodes,
                      tape.constant(graph.onehot),
                      tape.constant(graph.interior),
                      tape.constant(norm.normalize_edges(graph.edge_feats)))


def _norm_rows(tape: T.Tape, norm: Normalizer):
    neg_mean = tape.constant(-norm.node_mean[None, :])
    inv_std = tape.constant(1.0 / norm.node_std[None, :])
    return neg_mean, inv_std


def encode(tape: T.Tape, tp: dict, config: GnnConfig, norm: Normalizer,
           bg: BoundGraph, u: T.Tensor, u_prime: T.Tensor,
           c: T.Tensor) -> tuple[T.Tensor, T.Tensor]:
    """Lift (state, velocity field, node type) and edge geometry to latents."""
    n_affine = config.mlp_layers + 1
    neg_mean, inv_std = _norm_rows(tape, norm)
    feats = T.concat([u, u_prime, c, bg.onehot])
    feats = T.multiply(T.add(feats, neg_mean), inv_std)
    v = _mlp(tp, "node_encoder", n_affine, feats)
    e = _mlp(tp, "edge_encoder", n_affine, bg.edge_feats_n)
    return v, e


def encode_edges(tape: T.Tape, tp: dict, config: GnnConfig,
                 bg: BoundGraph) -> T.Tensor:
    return _mlp(tp, "edge_encoder", config.mlp_layers + 1, bg.edge_feats_n)


def encode_nodes(tape: T.Tape, tp: dict, config: GnnConfig, norm: Normalizer,
                 bg: BoundGraph, u: T.Tensor, u_prime: T.Tensor,
                 c: T.Tensor) -> T.Tensor:
    n_affine = config.mlp_layers + 1
    neg_mean, inv_std = _norm_rows(tape, norm)
    feats = T.concat([u, u_prime, c, bg.onehot])
    feats = T.multiply(T.add(feats, neg_mean), inv_std)
    return _mlp(tp, "node_encoder", n_affine, feats)


def process_step(tp: dict, config: GnnConfig, bg: BoundGraph, step_idx: int,
                 v: T.Tensor, e: T.Tensor) -> tuple[T.Tensor, T.Tensor]:
    """One residual message-passing round: edges first, then receivers."""
    n_affine = config.mlp_layers + 1
    vs = T.gather_rows(v, bg.senders)
    vr = T.gather_rows(v, bg.receivers)
    e_new = T.add(e, _mlp(tp, f"edge_block{step_idx}", n_affine,
                          T.concat([e, vs, vr])))
    agg = T.scatter_sum(e_new, bg.receivers, bg.n_nodes)
    v_new = T.add(v, _mlp(tp, f"node_block{step_idx}", n_affine,
                          T.concat([v, agg])))
    return v_new, e_new


def predict_delta_normalized(tape: T.Tape, tp: dict, config: GnnConfig,
                             norm: Normalizer, bg: BoundGraph,
                             u: T.Tensor, u_prime: T.Tensor, c: T.Tensor,
                             e0: T.Tensor | None = None) -> T.Tensor:
    """Decoder output before denormalization, shape (N, out_features)."""
    if e0 is None:
        e0 = encode_edges(tape, tp, config, bg)
    v = encode_nodes(tape, tp, config, norm, bg, u, u_prime, c)
    e = e0
    for s in range(config.steps):
        v, e = process_step(tp, config, bg, s, v, e)
    return _mlp(tp, "decoder", config.mlp_layers + 1, v)


def step(tape: T.Tape, tp: dict, config: GnnConfig, norm: Normalizer,
         bg: BoundGraph, u: T.Tensor, u_prime: T.Tensor, c: T.Tensor,
         e0: T.Tensor | None = None) -> tuple[T.Tensor, T.Tensor]:
    """Advance (u, u') by one surrogate step with hard Dirichlet projection."""
    out_n = predict_delta_normalized(tape, tp, config, norm, bg,
                                     u, u_prime, c, e0)
    out_std = tape.constant(norm.out_std[None, :])
    out_mean = tape.constant(norm.out_mean[None, :])
    delta = T.add(T.multiply(out_n, out_std), out_mean)
    u_next = T.multiply(T.add(u, T.slice_cols(delta, 0, 1)), bg.interior)
    up_next = T.multiply(T.add(u_prime, T.slice_cols(delta, 1, 2)),
                         bg.interior)
    return u_next, up_next


@dataclasses.dataclass
class Rollout:
    """states[k] = (u, u') tensors after k surrogate steps; states[0] is
    the initial state.  marks are tape positions at each step boundary,
    ready for checkpoint_segment."""

    states: list[tuple[T.Tensor, T.Tensor]]
    marks: list[int]


def rollout(tape: T.Tape, tp: dict, config: GnnConfig, norm: Normalizer,
            bg: BoundGraph, u0: T.Tensor, up0: T.Tensor, c: T.Tensor,
            n_steps: int) -> Rollout:
    if n_steps < 0:
        raise GnnError(f"n_steps must be >= 0, got {n_steps}")
    e0 = encode_edges(tape, tp, config, bg) if n_steps > 0 else None
    states = [(u0, up0)]
    marks = []
    u, up = u0, up0
    for _ in range(n_steps):
        marks.append(tape.mark())
        u, up = step(tape, tp, config, norm, bg, u, up, c, e0)
        states.append((u, up))
    return Rollout(states, marks)


def rollout_numpy(params: GnnParams, norm: Normalizer, graph: GraphData,
                  u0: np.ndarray, up0: np.ndarray, c: np.ndarray,
                  n_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Closed-loop prediction as plain arrays, (n_steps+1, N) each."""
    tape = T.Tape()
    tp = params_on_tape(tape, params)
    bg = bind_graph(tape, graph, norm)
    ro = rollout(tape, tp, params.config, norm, bg,
                 tape.constant(u0[:, None]), tape.constant(up0[:, None]),
                 tape.constant(c[:, None]), n_steps)
    u = np.stack([s[0].data[:, 0] for s in ro.states])
    up = np.stack([s[1].data[:, 0] for s in ro.states])
    return u, up


# ---------------------------------------------------------------------------
# training


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    epochs: int = 25
    batch_size: int = 4          # graphs per optimization step
    lr0: float = 1e-3
    lr1: float = 1e-6
    seed: int = 0


@dataclasses.dataclass
class TrainResult:
    """history rows: epoch, lr, train_loss (normalized MSE over the epoch's
    batches), valid_loss (raw-unit held-out 1-step MSE, when provided).
    initial_loss is the clean full-set normalized MSE before any update."""

    params: GnnParams
    normalizer: Normalizer
    history: list[dict]
    initial_loss: float = math.nan
    diverged: bool = False


def _concat_pairs(batch: list[SnapshotPair]):
    """Merge graphs into one disjoint union with offset edge indices."""
    us, ups, cs, onehots, interiors, deltas = [], [], [], [], [], []
    senders, receivers, efeats = [], [], []
    offset = 0
    for p in batch:
        g = p.graph
        us.append(p.u)
        ups.append(p.u_prime)
        cs.append(p.c)
        onehots.append(g.onehot)
        interiors.append(g.interior)
        deltas.append(p.delta)
        senders.append(g.senders + offset)
        receivers.append(g.receivers + offset)
        efeats.append(g.edge_feats)
        offset += g.n_nodes
    merged = GraphData(np.concatenate(senders), np.concatenate(receivers),
                       np.concatenate(efeats), np.concatenate(onehots),
                       np.concatenate(interiors), offset)
    return (merged, np.concatenate(us), np.concatenate(ups),
            np.concatenate(cs), np.concatenate(deltas))


def _batch_loss(params: GnnParams, norm: Normalizer,
                batch: list[SnapshotPair], noise=None, trainable=False):
    """Forward one merged batch; returns (loss tensor, tape, grads later)."""
    graph, u, up, c, delta = _concat_pairs(batch)
    if noise is not None:
        u = u + noise[0]
        up = up + noise[1]
    tape = T.Tape()
    tp = params_on_tape(tape, params, trainable=trainable)
    bg = bind_graph(tape, graph, norm)
    out_n = predict_delta_normalized(tape, tp, params.config, norm, bg,
                                     tape.constant(u[:, None]),
                                     tape.constant(up[:, None]),
                                     tape.constant(c[:, None]))
    target = tape.constant(norm.normalize_out(delta))
    loss = T.mse_loss(out_n, target)
    return loss, tape, tp


def dataset_loss(params: GnnParams, norm: Normalizer,
                 pairs: list[SnapshotPair], chunk: int = 16) -> float:
    """Clean (noise-free) normalized MSE over a whole pair set."""
    if not pairs:
        raise GnnError("dataset_loss needs at least one pair")
    total, count = 0.0, 0
    for k in range(0, len(pairs), chunk):
        batch = pairs[k:k + chunk]
        loss, _, _ = _batch_loss(params, norm, batch)
        n = sum(p.graph.n_nodes for p in batch)
        total += float(loss.data) * n
        count += n
    return total / count


def one_step_mse(params: GnnParams, norm: Normalizer,
                 pairs: list[SnapshotPair], chunk: int = 16) -> float:
    """Raw-unit MSE of predicted vs true increments, mean over all entries."""
    if not pairs:
        raise GnnError("one_step_mse needs at least one pair")
    sse = 0.0
    count = 0
    for k in range(0, len(pairs), chunk):
        batch = pairs[k:k + chunk]
        graph, u, up, c, delta = _concat_pairs(batch)
        tape = T.Tape()
        tp = params_on_tape(tape, params)
        bg = bind_graph(tape, graph, norm)
        out_n = predict_delta_normalized(tape, tp, params.config, norm, bg,
                                         tape.constant(u[:, None]),
                                         tape.constant(up[:, None]),
                                         tape.constant(c[:, None]))
        pred = out_n.data * norm.out_std + norm.out_mean
        sse += float(np.sum(np.square(pred - delta)))
        count += delta.size
    return sse / count


def train(train_pairs: list[SnapshotPair], config: GnnConfig,
          tcfg: TrainConfig,
          valid_pairs: list[SnapshotPair] | None = None) -> TrainResult:
    """Supervised 1-step training with input noise and exponential lr decay.

    Deterministic for a fixed TrainConfig.seed.  If a batch loss goes
    non-finite the loop stops and the parameters roll back to the end of
    the last completed epoch.
    """
    if not train_pairs:
        raise GnnError("training needs at least one snapshot pair")
    norm = compute_normalizer(train_pairs)
    params = init_params(config, tcfg.seed)
    named = params.named()
    shuffle_rng = util.rng_for(tcfg.seed, "gnn/train/shuffle")
    noise_rng = util.rng_for(tcfg.seed, "gnn/train/noise")
    adam = Adam()
    lr_of = exp_decay(tcfg.lr0, tcfg.lr1, tcfg.epochs)
    # raw-unit noise scale per state channel (config value is normalized)
    noise_scale = (config.noise_std * norm.node_std[0],
                   config.noise_std * norm.node_std[1])

    history: list[dict] = []
    initial_loss = dataset_loss(params, norm, train_pairs)
    snapshot = {k: v.copy() for k, v in named.items()}
    diverged = False
    for epoch in range(tcfg.epochs):
        lr = lr_of(epoch)
        order = shuffle_rng.permutation(len(train_pairs))
        total, n_batches = 0.0, 0
        for k in range(0, len(order), tcfg.batch_size):
            batch = [train_pairs[i] for i in order[k:k + tcfg.batch_size]]
            n_nodes = sum(p.graph.n_nodes for p in batch)
            noise = (noise_rng.standard_normal(n_nodes) * noise_scale[0],
                     noise_rng.standard_normal(n_nodes) * noise_scale[1])
            try:
                loss, tape, tp = _batch_loss(params, norm, batch,
                                             noise=noise, trainable=True)
                loss_val = float(loss.data)
                grads = T.backward(tape, loss)
            except T.NumericError:
                diverged = True
                break
            if not math.isfinite(loss_val):
                diverged = True
                break
            adam.step(named, {k2: grads[t] for k2, t in tp.items()}, lr=lr)
            total += loss_val
            n_batches += 1
        if diverged:
            for k2, arr in named.items():
                arr[:] = snapshot[k2]
            break
        snapshot = {k2: v.copy() for k2, v in named.items()}
        record = {"epoch": epoch, "lr": lr, "train_loss": total / n_batches}
        if valid_pairs:
            record["valid_loss"] = one_step_mse(params, norm, valid_pairs)
        history.append(record)
    return TrainResult(params, norm, history, initial_loss, diverged)


# ---------------------------------------------------------------------------
# checkpoint file


def save_gnn(path, params: GnnParams, norm: Normalizer) -> None:
    cfg = params.config
    with util.atomic_open(path) as f:
        util.write_magic(f, util.MAGIC_GNN)
        f.write(struct.pack("<6q", cfg.hidden, cfg.steps, cfg.mlp_layers,
                            cfg.node_features, cfg.edge_features,
                            cfg.out_features))
        f.write(struct.pack("<d", cfg.noise_std))
        for arr in (norm.node_mean, norm.node_std, norm.edge_mean,
                    norm.edge_std, norm.out_mean, norm.out_std):
            util.write_array(f, arr)
        named = params.named()
        f.write(struct.pack("<q", len(named)))
        for arr in named.values():
            util.write_array(f, arr)


def load_gnn(path) -> tuple[GnnParams, Normalizer]:
    with open(path, "rb") as f:
        util.read_magic(f, util.MAGIC_GNN)
        hidden, steps, layers, nf, ef, of = struct.unpack("<6q", f.read(48))
        (noise_std,) = struct.unpack("<d", f.read(8))
        cfg = GnnConfig(hidden, steps, layers, nf, ef, of, noise_std)
        stats = [util.read_array(f) for _ in range(6)]
        norm = Normalizer(*stats)
        params = init_params(cfg, 0)
        named = params.named()
        (count,) = struct.unpack("<q", f.read(8))
        if count != len(named):
            raise util.ArtifactFormatError(
                f"checkpoint holds {count} arrays, config implies {len(named)}")
        for name, slot in named.items():
            arr = util.read_array(f)
            if arr.shape != slot.shape:
                raise util.ArtifactFormatError(
                    f"array {name}: stored shape {arr.shape} != {slot.shape}")
            slot[:] = arr
    return params, norm
