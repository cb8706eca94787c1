import numpy as np
import pytest

from stq import optimize as op
from stq import spin_model as sm
from stq.noise import NoiseModel
from stq.pulses import validate
from oracles import central_difference


def small_problem(n=10, weights=None, max_iter=30, **kw):
    model = kw.pop("model", sm.DeviceModel(ec=350.0))
    return op.OptimizationProblem.build(
        sm.target_gate_matrix(kw.pop("gate", "cnot")), model, sm.MagneticGradients(),
        NoiseModel(alpha=0.0), n, weights=weights or op.Weights(),
        settings=op.LMSettings(max_iter=max_iter), **kw)


def test_linear_least_squares_converges_fast():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(12, 5))
    x_true = rng.normal(size=5)
    b = a @ x_true
    res = op.levenberg_marquardt(lambda x: a @ x - b, lambda x: (a @ x - b, a), np.zeros(5),
                                 op.LMSettings(mu_init=1e-12))
    assert res.iterations <= 3
    np.testing.assert_allclose(res.x, x_true, atol=1e-12)
    assert res.reason == "residual_tol"


def test_rosenbrock_history_decreases():
    def f(x):
        return np.array([10 * (x[1] - x[0] ** 2), 1 - x[0]])

    def fj(x):
        return f(x), np.array([[-20 * x[0], 10], [-1, 0]])

    res = op.levenberg_marquardt(f, fj, np.array([-1.2, 1.0]))
    assert np.all(np.diff(res.history) < 0)
    np.testing.assert_allclose(res.x, [1, 1], atol=1e-8)


def test_damping_cap_stops_hopeless_runs():
    res = op.levenberg_marquardt(lambda x: np.array([1.0]), lambda x: (np.array([1.0]), np.zeros((1, 1))),
                                 np.zeros(1), op.LMSettings(mu_max=1e3))
    assert res.reason in ("damping", "step_tol")


def test_logistic_map_stays_inside_bounds():
    pb = small_problem()
    x = pb.to_samples(np.array([-800.0, -3, 0, 3, 800.0]))
    assert np.all(x > pb.model.eps_min) and np.all(x < pb.model.eps_max)
    theta = np.array([-2.0, 0.1, 1.5])
    np.testing.assert_allclose(pb.from_samples(pb.to_samples(theta)), theta, atol=1e-10)
    fd = central_difference(pb.to_samples, theta)
    np.testing.assert_allclose(np.diag(fd), pb.sample_slope(theta), rtol=1e-7)


def test_jacobian_matches_finite_differences():
    pb = small_problem(n=20)
    theta = pb.random_theta(1)
    r, jac = op.residuals_and_jacobian(theta, pb)
    np.testing.assert_allclose(r, op.residuals(theta, pb), atol=1e-13)
    fd = central_difference(lambda t: op.residuals(t, pb), theta, h=1e-5)
    assert np.abs(jac - fd).max() / np.abs(fd).max() < 1e-5


def test_residual_norm_reproduces_weighted_objective():
    w = op.Weights(delta=2.0, i_b=0.5, i_s=1.5, i_f=0.7, l_c=3.0)
    pb = small_problem(weights=w)
    theta = pb.random_theta(2)
    t = op.objective_terms(theta, pb)
    expected = (w.delta ** 2 * t.delta_norm ** 2 + w.i_b ** 2 * t.i_b + w.i_s ** 2 * t.i_s
                + w.i_f ** 2 * t.i_f + w.l_c ** 2 * t.l_c)
    assert np.linalg.norm(op.residuals(theta, pb)) ** 2 == pytest.approx(expected, rel=1e-12)


def test_residual_vanishes_when_target_is_reached():
    pb = small_problem(weights=op.Weights(i_b=0, i_s=0, i_f=0, l_c=0))
    theta = pb.random_theta(3)
    t = op.objective_terms(theta, pb)
    reached = sm.GateTarget("reached", pb.target.matrix - t.delta)
    pb2 = small_problem(weights=op.Weights(i_b=0, i_s=0, i_f=0, l_c=0))
    pb2.target = reached
    assert np.abs(op.residuals(theta, pb2)).max() < 1e-12


def test_frozen_channel_has_no_columns():
    pb = small_problem(frozen_channels=(23,))
    assert pb.n_params == 2 * (pb.template.n - 4)
    model = sm.DeviceModel(residual_j23=0.0)
    pb = small_problem(model=model, frozen_channels=(23,), gate="x90",
                       weights=op.Weights(i_b=0, i_s=0, i_f=0))
    _, jac = op.residuals_and_jacobian(pb.random_theta(0), pb)
    assert np.all(jac[-1] == 0)  # L_c is identically zero without middle exchange


def test_quadrature_nodes_skip_inert_axes():
    pb = small_problem(model=sm.DeviceModel(residual_j23=0.005))
    offsets, weights = pb.quadrature_nodes("i_s")
    assert offsets.shape == (4, 6) and not offsets[:, 1].any()
    assert weights.sum() == pytest.approx(2 / 3)


def test_lma_is_deterministic_and_valid():
    pb = small_problem(max_iter=15)
    a = op.lma_minimize(pb, seed=4)
    b = op.lma_minimize(pb, seed=4)
    assert a.history == b.history
    np.testing.assert_array_equal(a.program.samples, b.program.samples)
    assert validate(a.program, pb.model) == []
    assert np.all(np.diff(a.history) < 0)


def test_multi_seed_search_properties():
    pb = small_problem(max_iter=10)
    one = op.multi_seed_search(pb, 1, first_seed=7)
    single = op.lma_minimize(pb, 7)
    assert one.history == single.history
    five = op.multi_seed_search(pb, 5)
    ten = op.multi_seed_search(pb, 10)
    assert ten.residual <= five.residual
    assert [s.seed for s in ten.per_seed] == list(range(10))
    par = op.multi_seed_search(pb, 5, workers=2)
    assert par.history == five.history and par.best_seed == five.best_seed
    with pytest.raises(ValueError):
        op.multi_seed_search(pb, 0)


def test_checkpoint_resume(tmp_path):
    pb = small_problem(max_iter=6)
    pb.settings = op.LMSettings(max_iter=6, checkpoint_every=2)
    path = tmp_path / "ck.json"
    first = op.lma_minimize(pb, 2, checkpoint=str(path))
    state = op.load_checkpoint(path)
    assert state["iteration"] == 6 and state["seed"] == 2
    np.testing.assert_array_equal(state["theta"], first.per_seed[0].theta)
    pb.settings = op.LMSettings(max_iter=8, checkpoint_every=2)
    resumed = op.lma_minimize(pb, 2, checkpoint=str(path))
    assert resumed.per_seed[0].iterations == 8
    assert resumed.history[0] == pytest.approx(first.history[-1])


def test_problem_validation():
    with pytest.raises(ValueError):
        op.Weights(delta=-1)
    model = sm.DeviceModel()
    with pytest.raises(ValueError, match="no free"):
        op.OptimizationProblem.build(sm.target_gate_matrix("cnot"), model, sm.MagneticGradients(),
                                     NoiseModel(), 6, frozen_channels=(12, 23, 34))


def test_stored_compensated_x90_avoids_simultaneous_exchange():
    from stq.experiments import stored_pulse
    from stq.propagator import evolve
    from stq.pulses import render

    program, config = stored_pulse("x90_compensated")
    model, _, grads, target = config.resolve()
    tr = render(program, config.kernel(program.fs))
    assert evolve(tr, grads, model, target).delta_norm < 1e-3
    j = sm.exchange_from_detuning(tr.eps, model)
    j_max = sm.exchange_from_detuning(model.eps_max, model)
    assert np.mean(j[0] * j[2]) < j_max ** 2
