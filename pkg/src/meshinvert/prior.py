"""Autodecoder prior over per-node fields.

A coordinate MLP maps (latent code z, position x) to a field value in
[0,1]; every training sample owns one latent row, and rows are optimized
jointly with the shared weights under a tight Gaussian latent prior.
Positions pass through a sinusoidal feature lift so the relu network can
represent the band-limited random fields used for data synthesis.

Decoding is a pure function of coordinates, so a trained prior evaluates
on any mesh over the unit square.  Two field transforms cover the use
cases downstream: initial states are multiplied by the boundary-distance
taper mask (Dirichlet stays exact), velocity fields map the sigmoid
output affinely onto [c_lo, c_hi].
"""

from __future__ import annotations

import dataclasses
import math
import struct

import numpy as np

from . import mesh as mesh_mod
from . import synth
from . import tensor as T
from . import util
from .optim import Adam


class PriorError(Exception):
    pass


HEADS = ("sigmoid", "linear")


@dataclasses.dataclass(frozen=True)
class PriorConfig:
    latent: int = 64
    width: int = 64             # hidden width (256 at full scale)
    layers: int = 6             # hidden relu layers
    freqs: int = 6              # positional-encoding frequency count F
    sigma: float = 0.01         # latent prior std
    head: str = "sigmoid"
    skip_layers: tuple[int, ...] = ()   # hidden layers that re-read z

    def __post_init__(self):
        if self.latent < 1:
            raise PriorError(f"latent dim must be >= 1, got {self.latent}")
        if self.freqs < 0:
            raise PriorError(f"frequency count must be >= 0, got {self.freqs}")
        if self.layers < 1 or self.width < 1:
            raise PriorError("need >= 1 hidden layer of width >= 1")
        if self.head not in HEADS:
            raise PriorError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.sigma <= 0:
            raise PriorError("sigma must be positive")
        for k in self.skip_layers:
            if not 1 <= k < self.layers:
                raise PriorError(
                    f"skip layer {k} outside hidden range 1..{self.layers - 1}")

    @property
    def enc_dim(self) -> int:
        return 2 + 4 * self.freqs


def encode_position(x: np.ndarray, freqs: int) -> np.ndarray:
    """Sinusoidal lift of (N, 2) coordinates to (N, 2 + 4*freqs)."""
    x = np.asarray(x, float)
    if x.ndim != 2 or x.shape[1] != 2:
        raise PriorError(f"coordinates must be (N, 2), got {x.shape}")
    parts = [x]
    for j in range(freqs):
        arg = (2.0 ** j) * math.pi * x
        parts.append(np.sin(arg))
        parts.append(np.cos(arg))
    return np.concatenate(parts, axis=1)


@dataclasses.dataclass
class PriorParams:
    config: PriorConfig
    layers: list[np.ndarray]    # [w0, b0, w1, b1, ...] in forward order

    def named(self) -> dict[str, np.ndarray]:
        out = {}
        for i, a in enumerate(self.layers):
            kind = "w" if i % 2 == 0 else "b"
            out[f"layer{i // 2}.{kind}"] = a
        return out

    def copy(self) -> "PriorParams":
        return PriorParams(self.config, [a.copy() for a in self.layers])


def _layer_dims(config: PriorConfig) -> list[tuple[int, int]]:
    dims = []
    in_dim = config.enc_dim + config.latent
    for k in range(config.layers):
        dims.append((in_dim, config.width))
        in_dim = config.width
        if (k + 1) in config.skip_layers:
            in_dim += config.latent
    dims.append((in_dim, 1))
    return dims


def init_params(config: PriorConfig, seed: int) -> PriorParams:
    """Glorot-uniform weights, zero biases.

    Columns fed by the latent code are scaled up by 1/sigma: the prior
    pins codes near ||z|| ~ sigma, and without the rescale the latent
    pathway is invisible at init and the decoder collapses onto the mean
    field (joint training then cannot tell samples apart).
    """
    rng = util.rng_for(seed, "prior/init")
    arrays = []
    z_gain = 1.0 / config.sigma
    for k, (fan_in, fan_out) in enumerate(_layer_dims(config)):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        if k == 0:
            w[config.enc_dim:, :] *= z_gain
        elif k in config.skip_layers:
            w[config.width:, :] *= z_gain
        arrays.append(w)
        arrays.append(np.zeros((1, fan_out)))
    return PriorParams(config, arrays)


def params_on_tape(tape: T.Tape, params: PriorParams,
                   trainable: bool = False) -> dict[str, T.Tensor]:
    if trainable:
        return {k: tape.leaf(v, trainable=True)
                for k, v in params.named().items()}
    return {k: tape.constant(v) for k, v in params.named().items()}


def decode(tape: T.Tape, tp: dict, config: PriorConfig, z: T.Tensor,
           enc: T.Tensor) -> T.Tensor:
    """Field values (N, 1) at encoded coordinates enc (N, enc_dim).

    z is a (1, latent) tensor; it is tiled across rows by a ones-matmul so
    gradients flow back into the single code.
    """
    n = enc.shape[0]
    ones = tape.constant(np.ones((n, 1)))
    z_tile = T.matmul(ones, z)
    h = T.concat([enc, z_tile])
    for k in range(config.layers):
        h = T.relu(T.add(T.matmul(h, tp[f"layer{k}.w"]), tp[f"layer{k}.b"]))
        if (k + 1) in config.skip_layers:
            h = T.concat([h, z_tile])
    last = config.layers
    y = T.add(T.matmul(h, tp[f"layer{last}.w"]), tp[f"layer{last}.b"])
    if config.head == "sigmoid":
        y = T.sigmoid(y)
    return y


def latent_penalty(tape: T.Tape, z: T.Tensor, sigma: float) -> T.Tensor:
    """||z||^2 / sigma^2 with gradient exactly 2 z / sigma^2."""
    return T.scalar_mul(T.squared_l2_norm(z), 1.0 / (sigma * sigma))


@dataclasses.dataclass(frozen=True)
class FieldSpec:
    """How a raw (0,1) decode becomes a physical field."""

    kind: str                  # "initial" | "velocity"
    c_lo: float = 0.5
    c_hi: float = 1.0
    taper_width: float = 0.1

    def __post_init__(self):
        if self.kind not in ("initial", "velocity"):
            raise PriorError(f"unknown field kind {self.kind!r}")
        if self.kind == "velocity" and not 0 < self.c_lo < self.c_hi:
            raise PriorError("velocity range needs 0 < c_lo < c_hi")


def field_mask(mesh: mesh_mod.Mesh, fspec: FieldSpec) -> np.ndarray | None:
    """Per-node taper mask for initial-state decodes, None for velocity."""
    if fspec.kind == "initial":
        return synth.taper_mask(mesh, fspec.taper_width)
    return None


def transform_decode(tape: T.Tape, y: T.Tensor, fspec: FieldSpec,
                     mask: T.Tensor | None) -> T.Tensor:
    if fspec.kind == "initial":
        if mask is None:
            raise PriorError("initial-state transform needs the taper mask")
        return T.multiply(y, mask)
    span = fspec.c_hi - fspec.c_lo
    offset = tape.constant(np.full((1, 1), fspec.c_lo))
    return T.add(T.scalar_mul(y, span), offset)


def decode_field(params: PriorParams, z: np.ndarray, mesh: mesh_mod.Mesh,
                 fspec: FieldSpec | None = None) -> np.ndarray:
    """Plain-array decode at every mesh node; optional field transform."""
    cfg = params.config
    tape = T.Tape()
    tp = params_on_tape(tape, params)
    enc = tape.constant(encode_position(mesh.nodes, cfg.freqs))
    zt = tape.constant(np.asarray(z, float).reshape(1, cfg.latent))
    y = decode(tape, tp, cfg, zt, enc)
    if fspec is not None:
        mask = field_mask(mesh, fspec)
        mask_t = tape.constant(mask[:, None]) if mask is not None else None
        y = transform_decode(tape, y, fspec, mask_t)
    return y.data[:, 0]


# ---------------------------------------------------------------------------
# training


@dataclasses.dataclass
class PriorSample:
    """One training field: node coordinates, [0,1] values, local spacing."""

    coords: np.ndarray      # (N, 2)
    values: np.ndarray      # (N,)
    noise_amp: float        # coordinate jitter amplitude (half mean edge)


def sample_from_mesh(mesh: mesh_mod.Mesh, values: np.ndarray) -> PriorSample:
    values = np.asarray(values, float)
    if values.shape != (mesh.nodes.shape[0],):
        raise PriorError(
            f"values shape {values.shape} does not match mesh "
            f"({mesh.nodes.shape[0]} nodes)")
    return PriorSample(mesh.nodes, values, 0.5 * mesh.mean_edge_length())


@dataclasses.dataclass(frozen=True)
class PriorTrainConfig:
    epochs: int = 2000
    lr: float = 1e-3
    points: int = 900           # coordinate subsample size per sample
    seed: int = 0
    log_every: int = 50
    # optional early stop: quit once the worst per-sample reconstruction
    # MSE (checked every log_every epochs) falls below this
    target_mse: float | None = None


@dataclasses.dataclass
class PriorTrainResult:
    params: PriorParams
    latents: np.ndarray         # (n_samples, latent)
    history: list[dict]         # epoch, lr, loss, recon_mse (periodic)
    diverged: bool = False


def _sample_terms(tape, tp, config, z_table, idx, sample, rng, points):
    n = sample.coords.shape[0]
    k = min(points, n)
    pick = rng.choice(n, size=k, replace=False)
    coords = sample.coords[pick] + rng.uniform(
        -sample.noise_amp, sample.noise_amp, size=(k, 2))
    enc = tape.constant(encode_position(coords, config.freqs))
    zi = T.gather_rows(z_table, np.array([idx]))
    y = decode(tape, tp, config, zi, enc)
    target = tape.constant(sample.values[pick][:, None])
    fit = T.tsum(T.square(T.subtract(y, target)))
    return T.add(fit, latent_penalty(tape, zi, config.sigma))


def reconstruction_mse(params: PriorParams, z: np.ndarray,
                       sample: PriorSample) -> float:
    cfg = params.config
    tape = T.Tape()
    tp = params_on_tape(tape, params)
    enc = tape.constant(encode_position(sample.coords, cfg.freqs))
    zt = tape.constant(np.asarray(z, float).reshape(1, cfg.latent))
    y = decode(tape, tp, cfg, zt, enc)
    return float(np.mean(np.square(y.data[:, 0] - sample.values)))


def train_prior(samples: list[PriorSample], config: PriorConfig,
                tcfg: PriorTrainConfig) -> PriorTrainResult:
    """Joint optimization of shared weights and one latent row per sample.

    Each epoch takes one Adam step on the summed objective over all
    samples: per sample, squared error at a jittered coordinate subsample
    plus the latent penalty.  Deterministic under tcfg.seed; a non-finite
    loss aborts with the previous epoch's parameters.
    """
    if not samples:
        raise PriorError("train_prior needs at least one sample")
    for s in samples:
        lo, hi = float(s.values.min()), float(s.values.max())
        if lo < -1e-9 or hi > 1.0 + 1e-9:
            raise PriorError(
                f"sample values must lie in [0,1], got [{lo:.3g}, {hi:.3g}]")
    params = init_params(config, tcfg.seed)
    init_rng = util.rng_for(tcfg.seed, "prior/latent-init")
    latents = init_rng.normal(0.0, 0.01, size=(len(samples), config.latent))
    rng = util.rng_for(tcfg.seed, "prior/train")
    named = dict(params.named())
    adam = Adam(lr=tcfg.lr)
    history: list[dict] = []
    snapshot = ({k: v.copy() for k, v in named.items()}, latents.copy())
    diverged = False
    for epoch in range(tcfg.epochs):
        tape = T.Tape()
        tp = params_on_tape(tape, params, trainable=True)
        z_table = tape.leaf(latents, trainable=True)
        loss = None
        try:
            for i, sample in enumerate(samples):
                term = _sample_terms(tape, tp, config, z_table, i, sample,
                                     rng, tcfg.points)
                loss = term if loss is None else T.add(loss, term)
            loss_val = float(loss.data)
            grads = T.backward(tape, loss)
        except T.NumericError:
            diverged = True
        if not diverged and not math.isfinite(loss_val):
            diverged = True
        if diverged:
            for k2, arr in named.items():
                arr[:] = snapshot[0][k2]
            latents[:] = snapshot[1]
            break
        step_params = dict(named)
        step_params["latents"] = latents
        step_grads = {k2: grads[t] for k2, t in tp.items()}
        step_grads["latents"] = grads[z_table]
        adam.step(step_params, step_grads)
        snapshot = ({k2: v.copy() for k2, v in named.items()}, latents.copy())
        if epoch % tcfg.log_every == 0 or epoch == tcfg.epochs - 1:
            recons = [reconstruction_mse(params, latents[i], s)
                      for i, s in enumerate(samples)]
            history.append({"epoch": epoch, "lr": tcfg.lr, "loss": loss_val,
                            "recon_mse": float(np.mean(recons)),
                            "recon_max": float(np.max(recons))})
            if tcfg.target_mse is not None and max(recons) < tcfg.target_mse:
                break
    return PriorTrainResult(params, latents, history, diverged)


def infer_latent(sample: PriorSample, params: PriorParams,
                 steps: int = 500, lr: float = 1e-2,
                 points: int = 900, seed: int = 0) -> np.ndarray:
    """Fit a latent code to one field with frozen decoder weights."""
    cfg = params.config
    rng = util.rng_for(seed, "prior/infer")
    z = util.rng_for(seed, "prior/infer-init").normal(
        0.0, 0.01, size=(1, cfg.latent))
    adam = Adam(lr=lr)
    for _ in range(steps):
        tape = T.Tape()
        tp = params_on_tape(tape, params)
        z_t = tape.leaf(z, trainable=True)
        term = _sample_terms(tape, tp, cfg, z_t, 0, sample, rng, points)
        grads = T.backward(tape, term)
        adam.step({"z": z}, {"z": grads[z_t]})
    return z[0]


# ---------------------------------------------------------------------------
# checkpoint file


def save_prior(path, params: PriorParams, latents: np.ndarray) -> None:
    cfg = params.config
    with util.atomic_open(path) as f:
        util.write_magic(f, util.MAGIC_PRIOR)
        f.write(struct.pack("<4q", cfg.latent, cfg.width, cfg.layers,
                            cfg.freqs))
        f.write(struct.pack("<d", cfg.sigma))
        f.write(struct.pack("<B", HEADS.index(cfg.head)))
        f.write(struct.pack("<q", len(cfg.skip_layers)))
        for k in cfg.skip_layers:
            f.write(struct.pack("<q", k))
        arrays = list(params.named().values())
        f.write(struct.pack("<q", len(arrays)))
        for arr in arrays:
            util.write_array(f, arr)
        util.write_array(f, np.asarray(latents, float))


def load_prior(path) -> tuple[PriorParams, np.ndarray]:
    with open(path, "rb") as f:
        util.read_magic(f, util.MAGIC_PRIOR)
        latent, width, layers, freqs = struct.unpack("<4q", f.read(32))
        (sigma,) = struct.unpack("<d", f.read(8))
        (head_idx,) = struct.unpack("<B", f.read(1))
        if head_idx >= len(HEADS):
            raise util.ArtifactFormatError(f"unknown head code {head_idx}")
        (n_skip,) = struct.unpack("<q", f.read(8))
        skips = tuple(struct.unpack("<q", f.read(8))[0] for _ in range(n_skip))
        cfg = PriorConfig(latent, width, layers, freqs, sigma,
                          HEADS[head_idx], skips)
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
        latents = util.read_array(f)
        if latents.ndim != 2 or latents.shape[1] != cfg.latent:
            raise util.ArtifactFormatError(
                f"latent table shape {latents.shape} does not match config")
    return params, latents
