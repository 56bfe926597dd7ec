"""Reference wave solver: P1 finite elements, semi-implicit time stepping.

The operator discretizes u_tt = c(x)^2 lap(u) with homogeneous Dirichlet
walls: cotangent-weight stiffness K, row-sum lumped mass M, and the
pointwise velocity factor applied nodewise.  Time integration is the
symplectic (semi-implicit) Euler update

    u' <- u' - dt * M^-1 (c^2 K u)
    u  <- u  + dt * u'

followed by an exact projection of both fields to zero on boundary nodes.
Datasets pair a fine simulation mesh with a coarse observation mesh;
snapshots are restricted to the coarse mesh by P1 interpolation.
"""

from __future__ import annotations

import logging
import os
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from . import mesh as mesh_mod
from . import synth
from .util import (
    MAGIC_TRAJECTORY,
    atomic_open,
    atomic_write_text,
    derive_seed,
    read_array,
    read_magic,
    write_array,
    write_magic,
)

log = logging.getLogger("meshinvert.wavesim")


class WaveError(ValueError):
    pass


class InstabilityError(FloatingPointError):
    pass


@dataclass
class WaveState:
    u: np.ndarray
    u_prime: np.ndarray
    t: float = 0.0

    def copy(self) -> "WaveState":
        return WaveState(self.u.copy(), self.u_prime.copy(), self.t)


@dataclass
class WaveOperator:
    mass: np.ndarray              # (N,) lumped, strictly positive
    stiffness: sparse.csr_matrix  # (N, N) symmetric PSD
    c: np.ndarray                 # (N,) wave speed per node
    c_sq: np.ndarray
    boundary: np.ndarray          # (N,) bool

    @property
    def num_nodes(self) -> int:
        return len(self.mass)

    def accel(self, u: np.ndarray) -> np.ndarray:
        return -(self.c_sq * (self.stiffness @ u)) / self.mass


def assemble(msh: mesh_mod.Mesh, c: np.ndarray | float) -> WaveOperator:
    """Cotangent-weight stiffness and lumped mass for P1 elements."""
    n = msh.num_nodes
    c = np.broadcast_to(np.asarray(c, dtype=np.float64), (n,)).copy()
    if not np.all(np.isfinite(c)) or np.any(c <= 0.0):
        raise WaveError("wave speed must be finite and positive everywhere")

    tris = msh.triangles
    p = msh.nodes[tris]  # (M, 3, 2)
    # edge vectors opposite each local vertex
    e = p[:, [2, 0, 1]] - p[:, [1, 2, 0]]  # (M, 3, 2)
    area2 = e[:, 0, 0] * e[:, 1, 1] - e[:, 0, 1] * e[:, 1, 0]  # 2*signed area
    area = 0.5 * np.abs(area2)
    # local stiffness K_ab = (e_a . e_b) / (4 A); equals the cotangent form
    dots = np.einsum("mad,mbd->mab", e, e)
    k_local = dots / (4.0 * area)[:, None, None]

    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    stiffness = sparse.coo_matrix(
        (k_local.ravel(), (rows, cols)), shape=(n, n)
    ).tocsr()
    stiffness.sum_duplicates()

    mass = np.zeros(n)
    np.add.at(mass, tris.ravel(), np.repeat(area / 3.0, 3))
    if np.any(mass <= 0.0):
        raise WaveError("lumped mass must be positive (orphan node?)")

    return WaveOperator(mass, stiffness, c, c * c, msh.boundary_mask.copy())


def max_stable_dt(op: WaveOperator, safety: float = 0.9,
                  iterations: int = 100) -> float:
    """CFL bound 2/sqrt(lambda_max) of M^-1 c^2 K, times the safety factor.

    lambda_max is estimated with power iteration; on non-convergence a
    warning is issued and the conservative Gershgorin bound is used.
    """
    n = op.num_nodes
    scale = op.c_sq / op.mass
    # deterministic non-constant start vector (constants are in K's kernel)
    v = np.cos(np.arange(n) * 2.399963229728653)
    v /= np.linalg.norm(v)
    lam = 0.0
    converged = False
    for _ in range(iterations):
        w = scale * (op.stiffness @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            break
        lam_new = norm
        v = w / norm
        if lam > 0.0 and abs(lam_new - lam) <= 1e-3 * lam_new:
            lam = lam_new
            converged = True
            break
        lam = lam_new
    if not converged:
        warnings.warn(
            "power iteration did not converge; using Gershgorin bound",
            RuntimeWarning,
        )
        row_abs = np.abs(op.stiffness).sum(axis=1).A1
        lam = float(np.max(scale * row_abs))
    if lam <= 0.0:
        raise WaveError("spectral bound came out non-positive")
    return safety * 2.0 / np.sqrt(lam)


def step(op: WaveOperator, state: WaveState, dt: float) -> WaveState:
    """One semi-implicit Euler step with hard Dirichlet projection."""
    u_prime = state.u_prime + dt * op.accel(state.u)
    u = state.u + dt * u_prime
    u[op.boundary] = 0.0
    u_prime[op.boundary] = 0.0
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(u_prime))):
        raise InstabilityError(
            f"non-finite state at t={state.t + dt:.6g} (dt={dt:.3e} too large?)"
        )
    return WaveState(u, u_prime, state.t + dt)


def energy(op: WaveOperator, state: WaveState) -> float:
    kinetic = 0.5 * float(state.u_prime @ (op.mass * state.u_prime))
    potential = 0.5 * float(state.u @ (op.c_sq * (op.stiffness @ state.u)))
    return kinetic + potential


def dominant_frequency(signal: np.ndarray, dt: float, pad: int = 8) -> float:
    """Angular frequency of the strongest spectral line in a probe signal.

    Hann window, zero-padded FFT, then parabolic interpolation of the
    log magnitude around the peak bin.  Resolves a pure tone to a small
    fraction of a bin; needs a few full periods in the window.
    """
    signal = np.asarray(signal, dtype=float).ravel()
    n = signal.size
    if n < 8:
        raise WaveError(f"signal too short to estimate a frequency ({n})")
    if dt <= 0.0:
        raise WaveError(f"dt must be positive, got {dt}")
    windowed = (signal - signal.mean()) * np.hanning(n)
    spectrum = np.abs(np.fft.rfft(windowed, n=pad * n))
    k = int(np.argmax(spectrum[1:-1])) + 1
    with np.errstate(divide="ignore"):
        a, b, c = np.log(spectrum[k - 1: k + 2])
    denom = a - 2.0 * b + c
    shift = 0.5 * (a - c) / denom if denom != 0.0 else 0.0
    return 2.0 * np.pi * (k + shift) / (pad * n * dt)


@dataclass
class Trajectory:
    u: np.ndarray          # (S, N) snapshots
    u_prime: np.ndarray    # (S, N)
    t: np.ndarray          # (S,)
    c: np.ndarray          # (N,)
    dt: float              # solver step
    stride: int            # solver steps per snapshot
    mesh_file: str = ""

    @property
    def num_snapshots(self) -> int:
        return len(self.t)

    @property
    def num_nodes(self) -> int:
        return self.u.shape[1]


def rollout(op: WaveOperator, initial: WaveState, n_steps: int, dt: float,
            stride: int = 5, mesh_file: str = "") -> Trajectory:
    """Integrate n_steps at dt and keep every stride-th state (plus step 0)."""
    if n_steps < 0:
        raise WaveError(f"n_steps {n_steps} must be >= 0")
    if stride < 1:
        raise WaveError(f"stride {stride} must be >= 1")
    if n_steps % stride != 0:
        raise WaveError(f"n_steps {n_steps} not a multiple of stride {stride}")
    state = initial.copy()
    state.u = state.u.copy()
    state.u_prime = state.u_prime.copy()
    state.u[op.boundary] = 0.0
    state.u_prime[op.boundary] = 0.0
    us = [state.u.copy()]
    ups = [state.u_prime.copy()]
    ts = [state.t]
    for k in range(1, n_steps + 1):
        state = step(op, state, dt)
        if k % stride == 0:
            us.append(state.u.copy())
            ups.append(state.u_prime.copy())
            ts.append(state.t)
    return Trajectory(np.asarray(us), np.asarray(ups), np.asarray(ts),
                      op.c.copy(), dt, stride, mesh_file)


# ---------------------------------------------------------------------------
# trajectory files


def save_trajectory(path, traj: Trajectory) -> None:
    mesh_ref = traj.mesh_file.encode()
    with atomic_open(path, "wb") as f:
        write_magic(f, MAGIC_TRAJECTORY)
        f.write(struct.pack("<H", len(mesh_ref)))
        f.write(mesh_ref)
        f.write(struct.pack("<qqqd", traj.num_nodes, traj.num_snapshots,
                            traj.stride, traj.dt))
        write_array(f, traj.c)
        write_array(f, traj.t)
        write_array(f, traj.u)
        write_array(f, traj.u_prime)


def load_trajectory(path) -> Trajectory:
    with open(path, "rb") as f:
        read_magic(f, MAGIC_TRAJECTORY)
        (ref_len,) = struct.unpack("<H", f.read(2))
        mesh_file = f.read(ref_len).decode()
        n, s, stride, dt = struct.unpack("<qqqd", f.read(32))
        c = read_array(f)
        t = read_array(f)
        u = read_array(f)
        u_prime = read_array(f)
    if u.shape != (s, n) or u_prime.shape != (s, n) or len(c) != n:
        raise WaveError(f"{path}: inconsistent shapes")
    return Trajectory(u, u_prime, t, c, dt, int(stride), mesh_file)


# ---------------------------------------------------------------------------
# dataset generation


@dataclass(frozen=True)
class MeshPair:
    name: str
    split: str  # "train" | "test"
    fine: mesh_mod.Mesh
    coarse: mesh_mod.Mesh


@dataclass(frozen=True)
class DatasetConfig:
    sample: synth.SampleConfig = synth.SampleConfig()
    gnn_steps: int = 30     # surrogate steps per trajectory
    stride: int = 5         # solver steps per surrogate step
    prior_samples: int = 0  # extra parameter draws without rollouts


@dataclass
class DatasetManifest:
    dt: float
    stride: int
    gnn_steps: int
    trajectories: list[dict]
    prior_samples: list[dict]

    def entries(self, split: str | None = None) -> list[dict]:
        if split is None:
            return list(self.trajectories)
        return [e for e in self.trajectories if e["split"] == split]


def _shared_dt(pairs: list[MeshPair], cfg: DatasetConfig) -> float:
    # one dt for the whole dataset: the stiffest admissible configuration is
    # c = c_hi everywhere on each fine mesh (lambda_max is monotone in c)
    dts = []
    for pair in pairs:
        op = assemble(pair.fine, cfg.sample.c_hi)
        dts.append(max_stable_dt(op))
    return min(dts)


def _one_trajectory(pair: MeshPair, cfg: DatasetConfig, dt: float,
                    sample_seed: int, out_dir: str, tag: str) -> dict:
    u0_fine, c_fine = synth.make_sample(pair.fine, cfg.sample, sample_seed)
    op = assemble(pair.fine, c_fine)
    traj_fine = rollout(op, WaveState(u0_fine, np.zeros_like(u0_fine)),
                        cfg.gnn_steps * cfg.stride, dt, cfg.stride)

    itp = mesh_mod.build_interpolator(pair.fine, pair.coarse.nodes)
    u_coarse = itp.apply(traj_fine.u.T).T
    up_coarse = itp.apply(traj_fine.u_prime.T).T
    c_coarse = itp.apply(c_fine)
    # restriction must respect the coarse mesh's own Dirichlet walls
    u_coarse[:, pair.coarse.boundary_mask] = 0.0
    up_coarse[:, pair.coarse.boundary_mask] = 0.0

    traj = Trajectory(u_coarse, up_coarse, traj_fine.t, c_coarse, dt,
                      cfg.stride, f"{pair.name}_coarse.mesh")
    traj_file = f"traj_{tag}.mtrj"
    sample_file = f"sample_{tag}.minv"
    save_trajectory(os.path.join(out_dir, traj_file), traj)
    synth.save_sample(os.path.join(out_dir, sample_file),
                      u_coarse[0], c_coarse)
    return {
        "split": pair.split, "mesh": pair.name,
        "mesh_file": f"{pair.name}_coarse.mesh",
        "fine_mesh_file": f"{pair.name}_fine.mesh",
        "traj_file": traj_file, "sample_file": sample_file,
        "seed": sample_seed,
    }


def generate_dataset(pairs: list[MeshPair], samples_per_mesh: int,
                     cfg: DatasetConfig, seed: int, out_dir: str,
                     jobs: int = 1) -> DatasetManifest:
    """Roll fine-mesh trajectories, restrict to coarse meshes, write files.

    Output: per-pair mesh files, one trajectory + parameter-sample file per
    (mesh, draw), optional rollout-free prior samples, and manifest.txt.
    Fully deterministic for fixed (pairs, cfg, seed); partial output is
    removed if any trajectory fails.
    """
    os.makedirs(out_dir, exist_ok=True)
    dt = _shared_dt(pairs, cfg)

    for pair in pairs:
        mesh_mod.save_mesh(pair.fine, os.path.join(out_dir, f"{pair.name}_fine.mesh"))
        mesh_mod.save_mesh(pair.coarse, os.path.join(out_dir, f"{pair.name}_coarse.mesh"))

    tasks = []
    for pair in pairs:
        for k in range(samples_per_mesh):
            tag = f"{pair.name}_{k}"
            sample_seed = derive_seed(seed, f"dataset/{pair.name}/{k}")
            tasks.append((pair, sample_seed, tag))

    written: list[str] = []
    entries: list[dict] = []
    try:
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                futures = [
                    pool.submit(_one_trajectory, pair, cfg, dt, s, out_dir, tag)
                    for pair, s, tag in tasks
                ]
                entries = [f.result() for f in futures]
        else:
            entries = [
                _one_trajectory(pair, cfg, dt, s, out_dir, tag)
                for pair, s, tag in tasks
            ]
        for e in entries:
            written.extend((e["traj_file"], e["sample_file"]))

        prior_entries = []
        train_pairs = [p for p in pairs if p.split == "train"] or pairs
        for k in range(cfg.prior_samples):
            pair = train_pairs[k % len(train_pairs)]
            s = derive_seed(seed, f"dataset/prior/{k}")
            u0, c = synth.make_sample(pair.coarse, cfg.sample, s)
            fname = f"prior_{k}.minv"
            synth.save_sample(os.path.join(out_dir, fname), u0, c)
            written.append(fname)
            prior_entries.append({
                "mesh_file": f"{pair.name}_coarse.mesh",
                "sample_file": fname, "seed": s,
            })
    except BaseException:
        for name in written:
            try:
                os.unlink(os.path.join(out_dir, name))
            except OSError:
                pass
        raise

    manifest = DatasetManifest(dt, cfg.stride, cfg.gnn_steps, entries,
                               prior_entries)
    save_manifest(os.path.join(out_dir, "manifest.txt"), manifest)
    return manifest


def save_manifest(path, manifest: DatasetManifest) -> None:
    lines = [
        "# dataset manifest",
        f"dt {manifest.dt:.17g}",
        f"stride {manifest.stride}",
        f"gnn_steps {manifest.gnn_steps}",
    ]
    for e in manifest.trajectories:
        lines.append(
            "traj {split} {mesh} {mesh_file} {fine_mesh_file} "
            "{traj_file} {sample_file} {seed}".format(**e)
        )
    for e in manifest.prior_samples:
        lines.append("prior {mesh_file} {sample_file} {seed}".format(**e))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_manifest(path) -> DatasetManifest:
    dt, stride, gnn_steps = 0.0, 5, 0
    trajectories: list[dict] = []
    prior_samples: list[dict] = []
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "dt":
                dt = float(parts[1])
            elif parts[0] == "stride":
                stride = int(parts[1])
            elif parts[0] == "gnn_steps":
                gnn_steps = int(parts[1])
            elif parts[0] == "traj":
                trajectories.append({
                    "split": parts[1], "mesh": parts[2],
                    "mesh_file": parts[3], "fine_mesh_file": parts[4],
                    "traj_file": parts[5], "sample_file": parts[6],
                    "seed": int(parts[7]),
                })
            elif parts[0] == "prior":
                prior_samples.append({
                    "mesh_file": parts[1], "sample_file": parts[2],
                    "seed": int(parts[3]),
                })
    return DatasetManifest(dt, stride, gnn_steps, trajectories, prior_samples)
