import numpy as np
import pytest

from stq import noise as nz
from stq import pulses as pl
from stq import spin_model as sm
from stq.fidelity import average_gate_fidelity, fidelity_from_superoperator
from stq.propagator import evolve, evolve_batch, step_data
from oracles import central_difference

# exchange switched off everywhere: eps_min so low that J is below 1e-40 rad/ns
QUIET = dict(eps_min=-30.0, residual_j23=0.0)


def constant_program(value, n=10, fs=1.0):
    prog = pl.PulseProgram(np.full((3, n), value, float), fs)
    return prog


def fit_loglog(x, y):
    return np.polyfit(np.log(x), np.log(y), 1)


def test_noise_model_validation():
    with pytest.raises(ValueError):
        nz.NoiseModel(alpha=3.0)
    with pytest.raises(ValueError, match="DC"):
        nz.NoiseModel(alpha=0.7, f_low=0.0)
    assert nz.NoiseModel(sigma_db=0.1).sigma_db == (0.1, 0.1, 0.1)


def test_gamma_unit_conversion():
    # 4e-20 V^2/Hz = 4e-20 * 1e6 mV^2 * 1e9 ns, halved for the single-sided convention
    assert nz.NoiseModel(s0=4e-20).gamma == pytest.approx(2e-5)


@pytest.mark.parametrize("order", [1, 3, 5, 8])
def test_gauss_hermite_moments(order):
    x, w = nz.gauss_hermite_rule(order, sigma=0.7)
    assert w.sum() == pytest.approx(1.0)
    for k, exact in [(0, 1), (2, 0.49), (4, 3 * 0.7 ** 4), (6, 15 * 0.7 ** 6)]:
        if k < 2 * order:
            assert np.dot(w, x ** k) == pytest.approx(exact, rel=1e-12)
    assert abs(np.dot(w, x ** 3)) < 1e-14


def test_tensor_ensemble_weights_and_axes():
    ens = nz.gauss_hermite_ensemble(nz.NoiseModel(), ["eps12", "db34"], order={"eps12": 3, "db34": 2})
    assert len(ens) == 6
    assert ens.weights.sum() == pytest.approx(1.0)
    assert not ens.offsets[:, [1, 2, 3, 4]].any()
    with pytest.raises(ValueError):
        nz.gauss_hermite_ensemble(nz.NoiseModel(), ["b_mean"])


@pytest.mark.parametrize("sigma_t", [0.0, 0.5, 1.0, 2.0])
def test_quasistatic_gradient_dephasing_closed_form(sigma_t):
    model = sm.DeviceModel(**QUIET)
    prog = constant_program(model.eps_min, n=20)
    tr = pl.render(prog, pl.default_impulse_response(1.0))
    # the rendered evolution includes the filter tail, so T exceeds n / fs
    noise = nz.NoiseModel(sigma_db=(sigma_t / tr.duration, 0, 0))
    ens = nz.gauss_hermite_ensemble(noise, ["db12"], order=20)
    grads = sm.MagneticGradients()
    v = evolve_batch(tr, grads, model, ens.offsets[:, :3], ens.offsets[:, 3:])[:, :4, :4]
    f = average_gate_fidelity(evolve(tr, grads, model).v_c, v, ens.weights)
    assert f == pytest.approx((3 + 2 * np.exp(-sigma_t ** 2 / 2)) / 5, abs=1e-10)


def test_white_noise_lindblad_closed_form():
    # constant J12 only, no gradients: A commutes with H, pure singlet/triplet dephasing
    model = sm.DeviceModel(**QUIET)
    eps12 = 0.1
    prog = constant_program(model.eps_min, n=20)
    prog.samples[0] = eps12
    noise = nz.NoiseModel(alpha=0.0, s0=4e-18, f_low=0.0)
    grads = sm.MagneticGradients(0, 0, 0)
    tr = pl.render(prog, pl.default_impulse_response(1.0))
    res = nz.lindblad_propagate(tr, grads, model, noise)
    rate = (sm.exchange_from_detuning(eps12, model) / model.eps0) ** 2
    lam = np.exp(-noise.gamma * rate * tr.duration / 2)
    u = evolve(tr, grads, model).v_c
    assert fidelity_from_superoperator(u, res.process) == pytest.approx((3 + 2 * lam) / 5, abs=1e-12)


def test_lindblad_is_trace_preserving():
    model = sm.DeviceModel(ec=350.0)
    rng = np.random.default_rng(0)
    prog = pl.PulseProgram(rng.uniform(model.eps_min, 0.2, (3, 8)), 1.0)
    tr = pl.render(prog, pl.default_impulse_response(1.0))
    res = nz.lindblad_propagate(tr, sm.MagneticGradients(), model, nz.NoiseModel(alpha=0.0, s0=1e-18))
    rho = np.zeros((6, 6), complex)
    rho[1, 1] = 1
    out = res.apply(rho)
    assert np.trace(out).real == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.eigvalsh(out).min() > -1e-12


def test_white_noise_surrogate_matches_lindblad_at_weak_noise():
    model = sm.DeviceModel()
    grads = sm.MagneticGradients()
    rng = np.random.default_rng(1)
    prog = pl.PulseProgram(rng.uniform(model.eps_min, model.eps_max, (3, 12)), 1.0)
    prog.samples[:, -4:] = model.eps_min
    tr = pl.render(prog, pl.default_impulse_response(1.0))
    noise = nz.NoiseModel(alpha=0.0, s0=4e-22)
    nominal = evolve(tr, grads, model, sm.target_gate_matrix("cnot"))
    exact = (average_gate_fidelity(nominal.u_c, nominal.v_c)
             - fidelity_from_superoperator(nominal.u_c, nz.lindblad_propagate(tr, grads, model, noise).process))
    sd = step_data(tr.eps, grads.as_array(), model, tr.dt_fine)
    approx, _ = nz.white_noise_infidelity(sd, noise.gamma)
    # first order in gamma, but the per-step trapezoid rule costs about a percent here
    assert approx == pytest.approx(exact, rel=0.03)


def test_white_noise_surrogate_gradient():
    model = sm.DeviceModel(ec=350.0)
    grads = sm.MagneticGradients()
    rng = np.random.default_rng(2)
    prog = pl.PulseProgram(rng.uniform(model.eps_min, model.eps_max, (3, 10)), 1.0)
    prog.samples[:, -4:] = model.eps_min
    kernel = pl.default_impulse_response(1.0)
    gamma = nz.NoiseModel().gamma

    def value(x):
        p = prog.copy()
        p.samples[:, :6] = x.reshape(3, 6)
        tr = pl.render(p, kernel)
        return nz.white_noise_infidelity(step_data(tr.eps, grads.as_array(), model, tr.dt_fine), gamma)[0]

    tr = pl.render(prog, kernel)
    _, g = nz.white_noise_infidelity(step_data(tr.eps, grads.as_array(), model, tr.dt_fine), gamma,
                                     prog, kernel, True)
    fd = central_difference(value, prog.samples[:, :6].ravel(), h=1e-5)
    np.testing.assert_allclose(g[:, :6].ravel(), fd, rtol=1e-5, atol=1e-12 * np.abs(fd).max())


@pytest.mark.parametrize("alpha", [0.0, 0.7])
def test_colored_noise_spectrum(alpha):
    noise = nz.NoiseModel(alpha=alpha)
    dt, n = 1.0, 2 ** 15
    traces = np.stack([nz.colored_noise_trace(noise, dt, n, nz.realization_stream(7, r))
                       for r in range(48)])
    f, s = nz.periodogram(traces, dt)
    s = s.mean(axis=0)
    keep = (f > 1e6) & (f < 1e8)
    slope, icpt = fit_loglog(f[keep], s[keep])
    assert -slope == pytest.approx(alpha, abs=0.05)
    # the log of a chi^2 average is biased by about -1/(2*48) = -1 %
    assert np.exp(icpt + slope * np.log(1e6)) == pytest.approx(noise.s0, rel=0.1)


def test_colored_noise_band_limits():
    noise = nz.NoiseModel(alpha=0.0, f_high=1e8)
    f, table = nz.psd_table(noise, 1.0, 1024)
    assert table[0] == 0 and table[f > 1e8].sum() == 0
    x = nz.colored_noise_trace(noise, 1.0, 1024, np.random.default_rng(0))
    _, s = nz.periodogram(x, 1.0)
    assert s[f > 1.01e8].max() < 1e-40
    with pytest.raises(ValueError):
        nz.colored_noise_trace(nz.NoiseModel(f_low=1e3), 1.0, 1024, np.random.default_rng(0))


def test_monte_carlo_is_deterministic_and_schedule_free():
    model = sm.DeviceModel()
    prog = pl.PulseProgram(np.full((3, 8), -0.3), 1.0)
    grads = sm.MagneticGradients()
    a = nz.monte_carlo_evaluate(prog, grads, model, nz.NoiseModel(), n_real=12, seed=3, chunk=5)
    b = nz.monte_carlo_evaluate(prog, grads, model, nz.NoiseModel(), n_real=12, seed=3, chunk=12)
    c = nz.monte_carlo_evaluate(prog, grads, model, nz.NoiseModel(), n_real=12, seed=3, workers=2)
    np.testing.assert_array_equal(a.v_c, b.v_c)
    np.testing.assert_array_equal(a.v_c, c.v_c)
    d = nz.monte_carlo_evaluate(prog, grads, model, nz.NoiseModel(), n_real=12, seed=4)
    assert not np.allclose(a.v_c, d.v_c)


def test_monte_carlo_quasistatic_matches_quadrature():
    model = sm.DeviceModel(**QUIET)
    prog = constant_program(model.eps_min, n=20)
    noise = nz.NoiseModel(sigma_db=(0.05, 0, 0))
    grads = sm.MagneticGradients()
    ens = nz.monte_carlo_evaluate(prog, grads, model, noise, ("qs_db",), n_real=2000, seed=1)
    tr = pl.render(prog, pl.default_impulse_response(1.0))
    u = evolve(tr, grads, model).v_c
    f_mc = average_gate_fidelity(u, ens.v_c)
    exact = (3 + 2 * np.exp(-(0.05 * tr.duration) ** 2 / 2)) / 5
    assert f_mc == pytest.approx(exact, abs=4 * np.std(
        [average_gate_fidelity(u, v) for v in ens.v_c]) / np.sqrt(2000))


def test_sources_share_random_numbers():
    model = sm.DeviceModel()
    noise = nz.NoiseModel()
    e1, b1, f1 = nz.draw_realization(noise, ("qs_eps", "qs_db", "fast"), 0.05, 100, 0, 9)
    e2, b2, f2 = nz.draw_realization(noise, ("qs_eps",), 0.05, 100, 0, 9)
    np.testing.assert_array_equal(e1, e2)
    assert f2 is None and not b2.any()


def test_lindblad_without_noise_is_unitary_evolution():
    model = sm.DeviceModel(ec=350.0)
    rng = np.random.default_rng(2)
    prog = pl.PulseProgram(rng.uniform(model.eps_min, 0.3, (3, 10)), 1.0)
    tr = pl.render(prog, pl.default_impulse_response(1.0))
    res = nz.lindblad_propagate(tr, sm.MagneticGradients(), model, nz.NoiseModel(alpha=0.0, s0=0.0))
    v = evolve(tr, sm.MagneticGradients(), model).v_c
    np.testing.assert_allclose(res.process, np.kron(v, v.conj()), atol=1e-10)


def test_monte_carlo_error_bar_matches_scatter():
    # the reported standard error should describe the spread of independent estimates
    model = sm.DeviceModel()
    prog = pl.PulseProgram(np.full((3, 6), -0.2), 1.0)
    grads = sm.MagneticGradients()
    u = evolve(pl.render(prog, pl.default_impulse_response(1.0)), grads, model).v_c
    means, errors = [], []
    for seed in range(20):
        ens = nz.monte_carlo_evaluate(prog, grads, model, nz.NoiseModel(), n_real=1000, seed=seed)
        f = np.array([average_gate_fidelity(u, v) for v in ens.v_c])
        means.append(f.mean())
        errors.append(f.std(ddof=1) / np.sqrt(f.size))
    ratio = np.std(means, ddof=1) / np.mean(errors)
    assert 0.5 < ratio < 2.0
