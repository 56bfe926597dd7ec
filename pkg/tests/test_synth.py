"""Random-field parameter draws: statistics, thresholding, taper, IO."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from meshinvert import mesh as M
from meshinvert import synth


def test_grf_statistics():
    f = synth.sample_grf(synth.GrfSpec(n=64, ell=0.2, amplitude=1.0, seed=0))
    assert f.shape == (64, 64)
    assert abs(f.mean()) < 1e-12
    assert abs(f.std() - 1.0) < 1e-12


def test_grf_amplitude_scales():
    a = synth.sample_grf(synth.GrfSpec(n=32, ell=0.3, amplitude=1.0, seed=1))
    b = synth.sample_grf(synth.GrfSpec(n=32, ell=0.3, amplitude=2.5, seed=1))
    assert np.allclose(b, 2.5 * a)


def test_grf_longer_correlation_is_smoother():
    rough = synth.sample_grf(synth.GrfSpec(n=64, ell=0.05, seed=2))
    smooth = synth.sample_grf(synth.GrfSpec(n=64, ell=0.4, seed=2))

    def roughness(f):
        return float(np.mean(np.square(np.diff(f, axis=0))) +
                     np.mean(np.square(np.diff(f, axis=1))))

    assert roughness(smooth) < 0.2 * roughness(rough)


@given(st.integers(0, 50))
def test_grf_deterministic(seed):
    a = synth.sample_grf(synth.GrfSpec(n=32, seed=seed))
    b = synth.sample_grf(synth.GrfSpec(n=32, seed=seed))
    assert np.array_equal(a, b)


def test_grf_spec_validation():
    with pytest.raises(synth.SynthError):
        synth.GrfSpec(n=48)  # not a power of two
    with pytest.raises(synth.SynthError):
        synth.GrfSpec(ell=0.0)
    with pytest.raises(synth.SynthError):
        synth.GrfSpec(amplitude=-1.0)


@given(st.floats(0.1, 0.9))
def test_threshold_fraction_tracks_quantile(q):
    rng = np.random.default_rng(7)
    field = rng.standard_normal(4000)
    out = synth.threshold_binary(field, q, 0.5, 1.0)
    assert set(np.unique(out)) <= {0.5, 1.0}
    frac_hi = float(np.mean(out == 1.0))
    assert abs(frac_hi - (1.0 - q)) < 0.02


def test_smoothstep_endpoints_and_monotone():
    t = np.linspace(0.0, 1.0, 101)
    s = synth.smoothstep(t)
    assert s[0] == 0.0 and s[-1] == 1.0
    assert np.all(np.diff(s) >= 0)
    assert np.all(synth.smoothstep(np.array([-1.0, 2.0])) == [0.0, 1.0])


def test_sample_ranges_and_taper(small_mesh):
    cfg = synth.SampleConfig()
    u, c = synth.make_sample(small_mesh, cfg, seed=0)
    assert u.shape == c.shape == (small_mesh.num_nodes,)
    assert u.min() >= 0.0 and u.max() <= 1.0
    assert set(np.unique(c)) <= {cfg.c_lo, cfg.c_hi}
    # taper takes the state to zero on the walls
    assert np.allclose(u[small_mesh.boundary_mask], 0.0)
    # and leaves the deep interior alone: some nodes keep amplitude
    assert u.max() > 0.5


def test_samples_differ_across_seeds(small_mesh):
    cfg = synth.SampleConfig()
    u0, c0 = synth.make_sample(small_mesh, cfg, seed=0)
    u1, c1 = synth.make_sample(small_mesh, cfg, seed=1)
    interior = small_mesh.interior_mask
    assert np.mean(u0[interior] != u1[interior]) >= 0.99
    assert not np.array_equal(c0, c1)


def test_sample_deterministic(small_mesh):
    cfg = synth.SampleConfig()
    a = synth.make_sample(small_mesh, cfg, seed=42)
    b = synth.make_sample(small_mesh, cfg, seed=42)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_sample_io_roundtrip(tmp_path, small_mesh):
    u, c = synth.make_sample(small_mesh, synth.SampleConfig(), seed=3)
    path = tmp_path / "s.minv"
    synth.save_sample(path, u, c)
    u2, c2 = synth.load_sample(path)
    assert np.array_equal(u, u2) and np.array_equal(c, c2)


def test_sample_io_rejects_truncation(tmp_path, small_mesh):
    u, c = synth.make_sample(small_mesh, synth.SampleConfig(), seed=3)
    path = tmp_path / "s.minv"
    synth.save_sample(path, u, c)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(Exception):
        synth.load_sample(path)
