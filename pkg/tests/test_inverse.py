import numpy as np
import pytest
from hypothesis import given, strategies as st

import meshinvert.gnn as G
import meshinvert.inverse as I
import meshinvert.mesh as M
import meshinvert.prior as P
import meshinvert.synth as S
import meshinvert.tensor as T
import meshinvert.wavesim as W
from meshinvert.util import ArtifactFormatError


@pytest.fixture(scope="module")
def inv_mesh():
    return M.generate_mesh(M.MeshSpec(120, seed=3))


@pytest.fixture(scope="module")
def ref_forward(inv_mesh):
    return I.ReferenceForward.from_mesh(inv_mesh, c_hi=1.0, stride=5)


@pytest.fixture(scope="module")
def truth_setup(inv_mesh, ref_forward):
    """Closed-loop fixture: known u0, constant c=1, noiseless observations."""
    u0, _ = S.make_sample(inv_mesh, S.SampleConfig(), seed=21)
    c = np.ones(inv_mesh.num_nodes)
    sensors = I.make_sensors(inv_mesh, 12, times=[1, 2, 3, 4, 5, 6], seed=0)
    tape = T.Tape()
    ro = ref_forward.run(tape, tape.constant(u0[:, None]),
                         tape.constant(np.zeros((inv_mesh.num_nodes, 1))),
                         tape.constant(c[:, None]), 6)
    u_steps = np.stack([s[0].data[:, 0] for s in ro.states])
    obs = I.make_observations(u_steps, sensors)
    return u0, c, sensors, obs


@pytest.fixture(scope="module")
def tiny_prior(inv_mesh):
    samples = []
    for s in (0, 1):
        u, _ = S.make_sample(inv_mesh, S.SampleConfig(), seed=30 + s)
        samples.append(P.sample_from_mesh(inv_mesh, u))
    cfg = P.PriorConfig(latent=8, width=32, layers=4, freqs=4, sigma=0.01)
    res = P.train_prior(samples, cfg,
                        P.PriorTrainConfig(epochs=300, lr=2e-3, points=200,
                                           seed=0))
    assert not res.diverged
    return res.params


# ---------------------------------------------------------------------------
# objectives


def test_objective_hand_values():
    pred = np.array([[1.0, 3.0]])
    truth = np.array([[0.0, 1.0]])
    assert I.objective_value(pred, truth, "mse") == pytest.approx(2.5)
    assert I.objective_value(pred, truth, "l1") == pytest.approx(1.5)


def test_objective_sums_per_step_means():
    pred = np.array([[1.0, 3.0], [2.0, 2.0]])
    truth = np.array([[0.0, 1.0], [0.0, 0.0]])
    # step means: mse (2.5, 4.0), l1 (1.5, 2.0)
    assert I.objective_value(pred, truth, "mse") == pytest.approx(6.5)
    assert I.objective_value(pred, truth, "l1") == pytest.approx(3.5)


def test_objective_validation():
    with pytest.raises(I.InverseError):
        I.objective_value(np.zeros((1, 2)), np.zeros((2, 2)), "mse")
    with pytest.raises(I.InverseError):
        I.objective_value(np.zeros((1, 2)), np.zeros((1, 2)), "huber")


@pytest.mark.parametrize("kind", ["mse", "l1"])
def test_tape_objective_matches_numpy(kind):
    rng = np.random.default_rng(5)
    n = 9
    u_steps = rng.normal(size=(4, n))
    sensors = I.SensorSet(np.array([1, 4, 7]), np.array([1, 3]))
    tape = T.Tape()
    states = [(tape.constant(u_steps[k][:, None]), None) for k in range(4)]
    truth = rng.normal(size=(2, 3))
    loss = I._objective_tape(tape, states, sensors, truth, 2, kind)
    expect = I.objective_value(u_steps[sensors.times][:, sensors.nodes],
                               truth, kind)
    assert float(loss.data) == pytest.approx(expect, rel=1e-12)


# ---------------------------------------------------------------------------
# progressive schedule


def test_schedule_count_formula():
    sch = I.ProgressiveSchedule(initial=1, period=120, max_steps=15)
    table = [(0, 1), (1, 1), (119, 1), (120, 2), (239, 2), (240, 3),
             (1559, 13), (1679, 14), (1680, 15), (10 ** 6, 15)]
    for it, expect in table:
        assert sch.count(it) == expect, (it, expect)


@given(st.integers(0, 10 ** 6), st.integers(0, 10 ** 6))
def test_schedule_monotone(i, j):
    sch = I.ProgressiveSchedule(initial=2, period=37, max_steps=11)
    lo, hi = min(i, j), max(i, j)
    assert sch.count(lo) <= sch.count(hi) <= 11
    assert sch.count(0) == 2


def test_schedule_validation():
    with pytest.raises(I.InverseError):
        I.ProgressiveSchedule(period=0)
    with pytest.raises(I.InverseError):
        I.ProgressiveSchedule(initial=0)
    with pytest.raises(I.InverseError):
        I.ProgressiveSchedule(initial=5, max_steps=4)
    with pytest.raises(I.InverseError):
        I.ProgressiveSchedule().count(-1)


def test_active_steps_prefix():
    sensors = I.SensorSet(np.array([2]), np.array([2, 4, 6, 8]))
    assert np.array_equal(I.active_steps(None, sensors, 0), [2, 4, 6, 8])
    sch = I.ProgressiveSchedule(initial=1, period=10, max_steps=15)
    assert np.array_equal(I.active_steps(sch, sensors, 0), [2])
    assert np.array_equal(I.active_steps(sch, sensors, 10), [2, 4])
    # capped by the available observation times, not max_steps
    assert np.array_equal(I.active_steps(sch, sensors, 999), [2, 4, 6, 8])


# ---------------------------------------------------------------------------
# sensors and measurement


def test_measure_picks_rows_and_columns():
    u_steps = np.arange(20, dtype=float).reshape(5, 4)
    sensors = I.SensorSet(np.array([0, 3]), np.array([2, 4]))
    got = I.measure(u_steps, sensors)
    assert np.array_equal(got, [[8.0, 11.0], [16.0, 19.0]])


def test_measure_is_linear(rng):
    u = rng.normal(size=(6, 10))
    v = rng.normal(size=(6, 10))
    sensors = I.SensorSet(np.array([1, 5, 8]), np.array([1, 2, 5]))
    lhs = I.measure(2.0 * u - 3.0 * v, sensors)
    rhs = 2.0 * I.measure(u, sensors) - 3.0 * I.measure(v, sensors)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_measure_beyond_trajectory_raises():
    sensors = I.SensorSet(np.array([0]), np.array([5]))
    with pytest.raises(I.InverseError):
        I.measure(np.zeros((5, 3)), sensors)


def test_make_sensors_interior_only(inv_mesh):
    sensors = I.make_sensors(inv_mesh, 10, times=[1, 2], seed=4)
    assert sensors.nodes.size == 10
    assert not np.any(inv_mesh.boundary_mask[sensors.nodes])
    assert np.all(np.diff(sensors.nodes) > 0)
    again = I.make_sensors(inv_mesh, 10, times=[1, 2], seed=4)
    assert np.array_equal(sensors.nodes, again.nodes)
    with pytest.raises(I.InverseError):
        I.make_sensors(inv_mesh, inv_mesh.num_nodes + 1, times=[1], seed=0)


def test_sensorset_validation():
    with pytest.raises(I.InverseError):
        I.SensorSet(np.array([], dtype=int), np.array([1]))
    with pytest.raises(I.InverseError):
        I.SensorSet(np.array([0]), np.array([], dtype=int))
    with pytest.raises(I.InverseError):
        I.SensorSet(np.array([0]), np.array([0, 1]))   # step 0 unobservable
    with pytest.raises(I.InverseError):
        I.SensorSet(np.array([0]), np.array([3, 2]))


def test_validate_for_rejects_boundary_sensor(inv_mesh):
    b = int(np.flatnonzero(inv_mesh.boundary_mask)[0])
    with pytest.raises(I.InverseError):
        I.SensorSet(np.array([b]), np.array([1])).validate_for(inv_mesh)
    with pytest.raises(I.InverseError):
        I.SensorSet(np.array([inv_mesh.num_nodes]),
                    np.array([1])).validate_for(inv_mesh)


def test_observations_validation():
    with pytest.raises(I.InverseError):
        I.Observations(np.zeros(4))


def test_make_observations_noise(rng):
    u = rng.normal(size=(4, 8))
    sensors = I.SensorSet(np.array([2, 5]), np.array([1, 3]))
    clean = I.make_observations(u, sensors)
    assert np.array_equal(clean.values, I.measure(u, sensors))
    noisy = I.make_observations(u, sensors, noise_std=0.1, seed=9)
    again = I.make_observations(u, sensors, noise_std=0.1, seed=9)
    assert not np.array_equal(noisy.values, clean.values)
    assert np.array_equal(noisy.values, again.values)


# ---------------------------------------------------------------------------
# forward models


def test_reference_forward_matches_stepper(inv_mesh, ref_forward):
    rng = np.random.default_rng(2)
    n = inv_mesh.num_nodes
    c = np.where(rng.uniform(size=n) < 0.5, 0.5, 1.0)
    u0 = rng.normal(size=n) * inv_mesh.interior_mask
    op = W.assemble(inv_mesh, c)
    traj = W.rollout(op, W.WaveState(u0, np.zeros(n)), 15, ref_forward.dt,
                     stride=5)
    tape = T.Tape()
    ro = ref_forward.run(tape, tape.constant(u0[:, None]),
                         tape.constant(np.zeros((n, 1))),
                         tape.constant(c[:, None]), 3)
    for k in range(4):
        assert np.allclose(ro.states[k][0].data[:, 0], traj.u[k], atol=1e-9)
        assert np.allclose(ro.states[k][1].data[:, 0], traj.u_prime[k],
                           atol=1e-9)


def test_reference_forward_zero_state_fixed_point(inv_mesh, ref_forward):
    n = inv_mesh.num_nodes
    tape = T.Tape()
    ro = ref_forward.run(tape, tape.constant(np.zeros((n, 1))),
                         tape.constant(np.zeros((n, 1))),
                         tape.constant(np.ones((n, 1))), 4)
    for u_t, up_t in ro.states:
        assert np.all(u_t.data == 0.0) and np.all(up_t.data == 0.0)


def test_gnn_forward_matches_numpy_rollout(inv_mesh, tmp_path):
    config = G.GnnConfig(hidden=8, steps=2, mlp_layers=2)
    params = G.init_params(config, seed=0)
    rng = np.random.default_rng(7)
    params.decoder[-2][:] = 0.05 * rng.normal(size=params.decoder[-2].shape)
    norm = G.Normalizer(
        node_mean=np.zeros(config.node_features),
        node_std=np.ones(config.node_features),
        edge_mean=np.zeros(config.edge_features),
        edge_std=np.ones(config.edge_features),
        out_mean=np.zeros(config.out_features),
        out_std=np.ones(config.out_features))
    path = tmp_path / "gnn.mgnn"
    G.save_gnn(path, params, norm)
    fwd = I.GnnForward.from_checkpoint(path, inv_mesh)
    n = inv_mesh.num_nodes
    u0 = rng.normal(size=n) * inv_mesh.interior_mask
    c = np.ones(n)
    tape = T.Tape()
    ro = fwd.run(tape, tape.constant(u0[:, None]),
                 tape.constant(np.zeros((n, 1))),
                 tape.constant(c[:, None]), 3)
    u_np, up_np = G.rollout_numpy(params, norm, fwd.graph, u0,
                                  np.zeros(n), c, 3)
    for k in range(4):
        assert np.allclose(ro.states[k][0].data[:, 0], u_np[k], atol=1e-12)
        assert np.allclose(ro.states[k][1].data[:, 0], up_np[k], atol=1e-12)


# ---------------------------------------------------------------------------
# the solve loop


def direct_problem(**kw):
    base = dict(task="initial", with_prior=False, max_iters=40, lr=5e-2,
                record_latents=False)
    base.update(kw)
    return I.InverseProblem(**base)


def test_solve_zero_residual_fixed_point(inv_mesh, ref_forward):
    n = inv_mesh.num_nodes
    sensors = I.make_sensors(inv_mesh, 8, times=[1, 2, 3], seed=1)
    obs = I.Observations(np.zeros((3, 8)))
    problem = direct_problem(max_iters=60, plateau_window=10)
    res = I.solve(problem, ref_forward, inv_mesh, sensors, obs,
                  P.FieldSpec(kind="initial"), c_known=np.ones(n))
    assert res.loss_trace[0] <= 1e-20
    assert res.best_loss <= 1e-20
    assert np.allclose(res.field, 0.0, atol=1e-12)
    # the plateau rule stops the loop long before max_iters
    assert res.iters <= 12


def test_solve_best_iterate_semantics(inv_mesh, ref_forward, truth_setup):
    u0, c, sensors, obs = truth_setup
    problem = direct_problem(max_iters=30)
    res = I.solve(problem, ref_forward, inv_mesh, sensors, obs,
                  P.FieldSpec(kind="initial"), c_known=c)
    assert not res.diverged
    assert res.iters == 30
    assert res.best_iter == int(np.argmin(res.loss_trace))
    assert res.best_loss == res.loss_trace[res.best_iter]
    assert res.best_loss <= res.loss_trace[0]
    assert res.active_trace.shape == res.loss_trace.shape
    assert np.all(res.active_trace == sensors.times.size)


def test_solve_objective_drops(inv_mesh, ref_forward, truth_setup):
    u0, c, sensors, obs = truth_setup
    problem = direct_problem(max_iters=150)
    res = I.solve(problem, ref_forward, inv_mesh, sensors, obs,
                  P.FieldSpec(kind="initial"), c_known=c)
    assert res.best_loss < 0.02 * res.loss_trace[0]


def test_solve_schedule_trace(inv_mesh, ref_forward, truth_setup):
    u0, c, sensors, obs = truth_setup
    sch = I.ProgressiveSchedule(initial=1, period=5, max_steps=4)
    problem = direct_problem(max_iters=25, schedule=sch)
    res = I.solve(problem, ref_forward, inv_mesh, sensors, obs,
                  P.FieldSpec(kind="initial"), c_known=c)
    assert np.array_equal(res.active_trace[:6], [1, 1, 1, 1, 1, 2])
    assert res.active_trace[-1] == 4
    # best iterate must come from the final (largest) regime
    assert res.active_trace[res.best_iter] == 4


def test_solve_with_prior_tracks_latents(inv_mesh, ref_forward, truth_setup,
                                         tiny_prior):
    u0, c, sensors, obs = truth_setup
    problem = I.InverseProblem(task="initial", with_prior=True, max_iters=10,
                               lr=1e-2, seed=3)
    res = I.solve(problem, ref_forward, inv_mesh, sensors, obs,
                  P.FieldSpec(kind="initial"), prior_params=tiny_prior,
                  c_known=c)
    assert res.z is not None and res.z.shape == (8,)
    assert res.latent_trace.shape == (10, 8)
    assert not np.array_equal(res.latent_trace[0], res.latent_trace[-1])
    assert res.prior_params is None     # no fine-tuning requested


def test_fine_tune_lr0_reproduces_frozen_run(inv_mesh, ref_forward,
                                             truth_setup, tiny_prior):
    u0, c, sensors, obs = truth_setup
    kw = dict(task="initial", with_prior=True, max_iters=12, lr=1e-2, seed=5)
    frozen = I.InverseProblem(**kw)
    lr0 = I.InverseProblem(fine_tune=(2, 8), prior_lr=0.0, **kw)
    r1 = I.solve(frozen, ref_forward, inv_mesh, sensors, obs,
                 P.FieldSpec(kind="initial"), prior_params=tiny_prior,
                 c_known=c)
    r2 = I.solve(lr0, ref_forward, inv_mesh, sensors, obs,
                 P.FieldSpec(kind="initial"), prior_params=tiny_prior,
                 c_known=c)
    assert np.array_equal(r1.loss_trace, r2.loss_trace)
    assert np.array_equal(r1.field, r2.field)


def test_fine_tune_moves_prior_weights_and_keeps_caller_copy(
        inv_mesh, ref_forward, truth_setup, tiny_prior):
    u0, c, sensors, obs = truth_setup
    before = [a.copy() for a in tiny_prior.layers]
    problem = I.InverseProblem(task="initial", with_prior=True, max_iters=40,
                               lr=1e-2, fine_tune=(0, 40), prior_lr=1e-3,
                               seed=5)
    res = I.solve(problem, ref_forward, inv_mesh, sensors, obs,
                  P.FieldSpec(kind="initial"), prior_params=tiny_prior,
                  c_known=c)
    for a, b in zip(tiny_prior.layers, before):
        assert np.array_equal(a, b)
    # weight updates start at iteration 0, so any later best iterate
    # decodes through fine-tuned weights and must carry them
    assert res.best_iter >= 1
    assert res.prior_params is not None
    assert any(not np.array_equal(a, b) for a, b in
               zip(res.prior_params.layers, before))


def test_direct_velocity_stays_in_range(inv_mesh, ref_forward, truth_setup):
    u0, c, sensors, obs = truth_setup
    fspec = P.FieldSpec(kind="velocity", c_lo=0.5, c_hi=1.0)
    problem = direct_problem(task="velocity", max_iters=15, lr=0.1)
    res = I.solve(problem, ref_forward, inv_mesh, sensors, obs, fspec,
                  u0_known=u0)
    assert np.all(res.field >= 0.5 - 1e-12)
    assert np.all(res.field <= 1.0 + 1e-12)


def test_problem_validation():
    with pytest.raises(I.InverseError):
        I.InverseProblem(task="pressure")
    with pytest.raises(I.InverseError):
        I.InverseProblem(objective="huber")
    with pytest.raises(I.InverseError):
        I.InverseProblem(with_prior=False, fine_tune=(0, 5))
    with pytest.raises(I.InverseError):
        I.InverseProblem(fine_tune=(5, 2))
    with pytest.raises(I.InverseError):
        I.InverseProblem(fine_tune=(-1, 2))
    with pytest.raises(I.InverseError):
        I.InverseProblem(max_iters=-1)


def test_solve_argument_validation(inv_mesh, ref_forward, truth_setup,
                                   tiny_prior):
    u0, c, sensors, obs = truth_setup
    with pytest.raises(I.InverseError):     # fspec kind vs task
        I.solve(direct_problem(), ref_forward, inv_mesh, sensors, obs,
                P.FieldSpec(kind="velocity"), c_known=c)
    with pytest.raises(I.InverseError):     # missing c_known
        I.solve(direct_problem(), ref_forward, inv_mesh, sensors, obs,
                P.FieldSpec(kind="initial"))
    with pytest.raises(I.InverseError):     # missing u0_known
        I.solve(direct_problem(task="velocity"), ref_forward, inv_mesh,
                sensors, obs, P.FieldSpec(kind="velocity"))
    with pytest.raises(I.InverseError):     # missing prior
        I.solve(I.InverseProblem(task="initial", with_prior=True),
                ref_forward, inv_mesh, sensors, obs,
                P.FieldSpec(kind="initial"), c_known=c)
    with pytest.raises(I.InverseError):     # observation shape
        I.solve(direct_problem(), ref_forward, inv_mesh, sensors,
                I.Observations(np.zeros((2, 2))),
                P.FieldSpec(kind="initial"), c_known=c)


# ---------------------------------------------------------------------------
# metrics and evaluation


def test_relative_error_curve_oracle():
    u_true = np.array([[1.0, 0.0], [0.0, 1.0]])
    u_pred = np.array([[1.0, 0.5], [0.0, 1.0]])
    curve = I.relative_error_curve(u_pred, u_true)
    assert curve == pytest.approx([0.5, 0.5 / np.sqrt(2.0)])
    with pytest.raises(I.InverseError):
        I.relative_error_curve(np.zeros((2, 2)), np.zeros((3, 2)))


def test_relative_error_curve_prefix_property(rng):
    u_true = rng.normal(size=(5, 7))
    u_pred = u_true + 0.1 * rng.normal(size=(5, 7))
    curve = I.relative_error_curve(u_pred, u_true)
    for k in range(5):
        num = np.linalg.norm(u_pred[:k + 1] - u_true[:k + 1])
        den = np.linalg.norm(u_true[:k + 1])
        assert curve[k] == pytest.approx(num / den, rel=1e-12)


def fake_result(n=10):
    return I.SolveResult(
        field=np.linspace(0, 1, n), z=None, prior_params=None,
        loss_trace=np.array([3.0, 1.0, 2.0]),
        active_trace=np.array([1, 1, 1]), latent_trace=None,
        best_iter=1, best_loss=1.0, iters=3, seconds_per_iter=0.25)


def test_evaluate_fields_and_timing_flag():
    res = fake_result()
    truth = np.zeros(10)
    u_pred = np.ones((3, 4))
    u_true = np.zeros((3, 4))
    problem = direct_problem()
    m = I.evaluate("s0", problem, "reference", res, truth, u_pred, u_true)
    assert m.field_mse == pytest.approx(np.mean(res.field ** 2))
    assert m.traj_mse == pytest.approx(1.0)
    assert m.seconds_per_iter == 0.25
    m_no = I.evaluate("s0", problem, "reference", res, truth, u_pred, u_true,
                      timing=False)
    assert m_no.seconds_per_iter == 0.0


def test_metrics_csv_roundtrip(tmp_path):
    rows = [
        I.Metrics("s0", "initial", True, "gnn", 1.5e-3, 2.5e-4, 312, 0.125),
        I.Metrics("s1", "velocity", False, "reference", 0.25, 0.5, 2000,
                  0.0625),
    ]
    path = tmp_path / "metrics.csv"
    I.write_metrics_csv(path, rows)
    text = path.read_text()
    assert text.splitlines()[0] == I.CSV_HEADER
    back = I.read_metrics_csv(path)
    assert len(back) == 2
    for a, b in zip(back, rows):
        assert (a.sample_id, a.task, a.with_prior, a.forward_model) == \
            (b.sample_id, b.task, b.with_prior, b.forward_model)
        assert a.field_mse == b.field_mse
        assert a.traj_mse == b.traj_mse
        assert a.iters == b.iters
        assert a.seconds_per_iter == b.seconds_per_iter


def test_metrics_csv_malformed_lines(tmp_path):
    path = tmp_path / "metrics.csv"
    path.write_text(I.CSV_HEADER + "\ns0,initial,1,gnn,0.1,0.2,5\n")
    with pytest.raises(ArtifactFormatError, match="line 2"):
        I.read_metrics_csv(path)
    path.write_text(I.CSV_HEADER +
                    "\ns0,initial,1,gnn,0.1,0.2,5,0.1\n"
                    "s1,initial,1,gnn,abc,0.2,5,0.1\n")
    with pytest.raises(ArtifactFormatError, match="line 3"):
        I.read_metrics_csv(path)
    path.write_text("wrong,header\n")
    with pytest.raises(ArtifactFormatError, match="line 1"):
        I.read_metrics_csv(path)


# ---------------------------------------------------------------------------
# solution records


def test_solution_io_roundtrip(tmp_path, inv_mesh, ref_forward, truth_setup,
                               tiny_prior):
    u0, c, sensors, obs = truth_setup
    problem = I.InverseProblem(
        task="initial", with_prior=True, max_iters=6, lr=1e-2,
        schedule=I.ProgressiveSchedule(1, 3, 4), fine_tune=(1, 4),
        prior_lr=1e-4, seed=2 ** 63 + 12345)
    res = I.solve(problem, ref_forward, inv_mesh, sensors, obs,
                  P.FieldSpec(kind="initial"), prior_params=tiny_prior,
                  c_known=c)
    metrics = I.evaluate("s0", problem, "reference", res, u0,
                         np.zeros((2, 3)), np.zeros((2, 3)))
    path = tmp_path / "sol.msol"
    I.save_solution(path, problem, res, metrics)
    back = I.load_solution(path)
    assert back["task"] == "initial"
    assert back["objective"] == "mse"
    assert back["with_prior"] is True
    assert back["schedule"] == (1, 3, 4)
    assert back["fine_tune"] == (1, 4)
    assert back["seed"] == 2 ** 63 + 12345
    assert back["max_iters"] == 6
    assert back["lr"] == 1e-2 and back["prior_lr"] == 1e-4
    assert back["best_iter"] == res.best_iter
    assert back["best_loss"] == res.best_loss
    assert back["iters"] == res.iters
    assert back["seconds_per_iter"] == res.seconds_per_iter
    assert np.array_equal(back["field"], res.field)
    assert np.array_equal(back["loss_trace"], res.loss_trace)
    assert np.array_equal(back["active_trace"], res.active_trace)
    assert np.array_equal(back["latent_trace"], res.latent_trace)
    assert back["metrics"]["field_mse"] == metrics.field_mse


def test_solution_io_rejects_wrong_magic(tmp_path):
    path = tmp_path / "sol.msol"
    problem = direct_problem()
    I.save_solution(path, problem, fake_result())
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(ArtifactFormatError):
        I.load_solution(path)
