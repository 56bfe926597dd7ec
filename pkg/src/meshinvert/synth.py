"""Synthetic parameter fields: spectral GRFs, binary maps, boundary tapers.

Fields are sampled on a periodic n x n grid by filtering white noise with a
squared-exponential spectral envelope, then transferred to mesh nodes by
bilinear interpolation.  Initial states are rescaled to [0, 1] and tapered
to zero at the boundary with a C^1 smoothstep of the edge-graph distance;
velocity maps are thresholded into two phases {c_lo, c_hi}.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import mesh as mesh_mod
from .util import (
    MAGIC_SAMPLE,
    atomic_open,
    derive_seed,
    read_array,
    read_magic,
    write_array,
    write_magic,
)


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class GrfSpec:
    """Stationary Gaussian random field on an n x n periodic grid.

    ell is the correlation length in domain units (the spectral filter is
    exp(-(k*ell)^2 / 2)); amplitude is the sample standard deviation.
    """

    n: int = 64
    ell: float = 0.2
    amplitude: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 8 or (self.n & (self.n - 1)) != 0:
            raise SynthError(f"grid size {self.n} must be a power of two >= 8")
        if not (0.0 < self.ell <= 1.0):
            raise SynthError(f"correlation length {self.ell} outside (0, 1]")
        if self.amplitude <= 0.0:
            raise SynthError(f"amplitude {self.amplitude} must be positive")


def sample_grf(spec: GrfSpec) -> np.ndarray:
    """One field realization, zero sample mean and sample std = amplitude."""
    rng = np.random.default_rng(spec.seed)
    white = rng.standard_normal((spec.n, spec.n))
    freq = np.fft.fftfreq(spec.n, d=1.0 / spec.n)  # cycles per unit domain
    kx, ky = np.meshgrid(freq, freq, indexing="ij")
    k = 2.0 * np.pi * np.hypot(kx, ky)
    envelope = np.exp(-0.5 * (k * spec.ell) ** 2)
    field = np.fft.ifft2(np.fft.fft2(white) * envelope).real
    field -= field.mean()
    std = field.std()
    if std < 1e-30:
        raise SynthError("degenerate field: spectral filter removed all modes")
    return field * (spec.amplitude / std)


def threshold_binary(field: np.ndarray, quantile: float,
                     c_lo: float, c_hi: float) -> np.ndarray:
    """Two-phase map: c_hi where the field exceeds its own quantile."""
    if not (0.0 < quantile < 1.0):
        raise SynthError(f"quantile {quantile} outside (0, 1)")
    if not (0.0 < c_lo < c_hi):
        raise SynthError(f"need 0 < c_lo < c_hi, got {c_lo}, {c_hi}")
    field = np.asarray(field, dtype=np.float64)
    if np.ptp(field) == 0.0:
        raise SynthError("constant field has no quantile threshold")
    cut = np.quantile(field, quantile)
    return np.where(field >= cut, c_hi, c_lo)


def smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def taper_initial(field: np.ndarray, distance: np.ndarray,
                  d0: float) -> np.ndarray:
    """Scale a field to zero at the boundary with a C^1 ramp of width d0."""
    if d0 <= 0.0:
        raise SynthError(f"taper width {d0} must be positive")
    return np.asarray(field, float) * smoothstep(np.asarray(distance) / d0)


def taper_mask(msh: mesh_mod.Mesh, d0: float) -> np.ndarray:
    return smoothstep(mesh_mod.boundary_distance(msh) / d0)


@dataclass(frozen=True)
class SampleConfig:
    """Recipe for one (initial state, velocity) parameter draw."""

    u_init: GrfSpec = GrfSpec(ell=0.2)
    velocity: GrfSpec = GrfSpec(ell=0.25)
    c_lo: float = 0.5
    c_hi: float = 1.0
    quantile: float = 0.5
    taper_width: float = 0.1


def _grid_to_nodes(field: np.ndarray, msh: mesh_mod.Mesh) -> np.ndarray:
    n = field.shape[0]
    axis = np.linspace(0.0, msh.size, n)
    itp = RegularGridInterpolator((axis, axis), field, method="linear",
                                  bounds_error=False, fill_value=None)
    # grid arrays are indexed (x, y), mesh nodes are (x, y) columns
    return itp(msh.nodes)


def make_sample(msh: mesh_mod.Mesh, config: SampleConfig,
                seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw (u_init, c) on the mesh nodes.

    u_init: GRF -> mesh -> min-max scaled to [0, 1] -> boundary taper.
    c: GRF -> mesh -> binary threshold into {c_lo, c_hi}.
    """
    u_spec = replace(config.u_init, seed=derive_seed(seed, "sample/u_init"))
    c_spec = replace(config.velocity, seed=derive_seed(seed, "sample/velocity"))

    u_grid = sample_grf(u_spec)
    u = _grid_to_nodes(u_grid, msh)
    span = np.ptp(u)
    if span == 0.0:
        raise SynthError("degenerate initial-state sample (constant on mesh)")
    u = (u - u.min()) / span
    u = taper_initial(u, mesh_mod.boundary_distance(msh), config.taper_width)

    c_grid = sample_grf(c_spec)
    c = threshold_binary(_grid_to_nodes(c_grid, msh), config.quantile,
                         config.c_lo, config.c_hi)
    return u, c


# ---------------------------------------------------------------------------
# parameter-sample files


def save_sample(path, u_init: np.ndarray, c: np.ndarray) -> None:
    if u_init.shape != c.shape or u_init.ndim != 1:
        raise SynthError(
            f"u_init {u_init.shape} and c {c.shape} must be equal-length vectors"
        )
    with atomic_open(path, "wb") as f:
        write_magic(f, MAGIC_SAMPLE)
        f.write(struct.pack("<q", len(u_init)))
        write_array(f, u_init)
        write_array(f, c)


def load_sample(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as f:
        read_magic(f, MAGIC_SAMPLE)
        (n,) = struct.unpack("<q", f.read(8))
        u = read_array(f)
        c = read_array(f)
    if len(u) != n or len(c) != n:
        raise SynthError(f"{path}: length mismatch")
    return u, c
