"""Noise treatments: quasistatic quadrature, white-noise Lindblad, colored Monte Carlo."""
from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np
from scipy.linalg import expm

from . import spin_model as sm
from .propagator import (StepData, evolve_batch, prefix_products, coherent_leakage,
                         sample_gradients)
from .pulses import ImpulseResponse, PulseProgram, RenderedTraces, default_impulse_response, render

F_REF = 1e6  # Hz, anchor frequency of the charge-noise spectrum
V2HZ_TO_MV2NS = 1e6 * 1e9
AXES = ("eps12", "eps23", "eps34", "db12", "db23", "db34")
SOURCES = ("qs_eps", "qs_db", "fast")


@dataclass(frozen=True)
class NoiseModel:
    """Noise strengths.

    sigma_eps: quasistatic detuning widths per channel (mV).
    sigma_db: quasistatic gradient widths per gradient (rad/ns).
    s0: single-sided charge-noise PSD at 1 MHz (V^2/Hz).
    alpha: spectral exponent of the fast noise.
    f_low, f_high: fast-noise band in Hz; ``None`` picks 1/T and the Nyquist
    frequency of the fine grid.  ``f_low = 0`` keeps the DC bin (white noise only).
    """

    sigma_eps: tuple = (0.008, 0.008, 0.008)
    sigma_db: tuple = (0.3 * 0.0388,) * 3
    s0: float = 4e-20
    alpha: float = 0.7
    f_low: Optional[float] = None
    f_high: Optional[float] = None
    quad_order: int = 3

    def __post_init__(self):
        se = np.broadcast_to(np.asarray(self.sigma_eps, float), (3,))
        sb = np.broadcast_to(np.asarray(self.sigma_db, float), (3,))
        object.__setattr__(self, "sigma_eps", tuple(float(x) for x in se))
        object.__setattr__(self, "sigma_db", tuple(float(x) for x in sb))
        problems = []
        if np.any(se < 0) or np.any(sb < 0) or self.s0 < 0:
            problems.append("noise widths must be non-negative")
        if not 0 <= self.alpha <= 2:
            problems.append("alpha must lie in [0, 2]")
        if self.f_low is not None and self.f_high is not None and not self.f_low < self.f_high:
            problems.append("f_low must be below f_high")
        if self.f_low is not None and self.f_low == 0 and self.alpha != 0:
            problems.append("the DC bin is only allowed for white noise")
        if self.quad_order < 1:
            problems.append("quad_order must be at least 1")
        if problems:
            raise ValueError("invalid NoiseModel: " + "; ".join(problems))

    def replace(self, **changes) -> "NoiseModel":
        return replace(self, **changes)

    @property
    def sigmas(self) -> np.ndarray:
        return np.array(self.sigma_eps + self.sigma_db)

    @property
    def gamma(self) -> float:
        """White-noise Lindblad rate in mV^2 ns."""
        return self.s0 * V2HZ_TO_MV2NS / 2

    def psd(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if self.alpha == 0:
            return np.full_like(f, self.s0)
        with np.errstate(divide="ignore"):
            return self.s0 * (f / F_REF) ** (-self.alpha)

    def band(self, dt: float, n_steps: int) -> tuple[float, float]:
        """Band limits in Hz for a grid with step ``dt`` in ns."""
        f_low = 1 / (n_steps * dt * 1e-9) if self.f_low is None else self.f_low
        f_high = 1 / (2 * dt * 1e-9) if self.f_high is None else self.f_high
        return f_low, f_high


# ---------------------------------------------------------------------------
# quasistatic quadrature


@dataclass
class QuasistaticEnsemble:
    offsets: np.ndarray  # (K, 6) ordered as AXES
    weights: np.ndarray  # (K,)

    def __len__(self):
        return len(self.weights)


def gauss_hermite_rule(order: int, sigma: float = 1.0):
    """Nodes and weights for the average over N(0, sigma^2)."""
    x, w = np.polynomial.hermite_e.hermegauss(order)
    w = w / w.sum()
    return sigma * x, w


def gauss_hermite_ensemble(noise: NoiseModel, axes: Iterable[str], order=None) -> QuasistaticEnsemble:
    """Tensor-product Gauss-Hermite rule over the chosen noise axes.

    ``order`` may be an int or a mapping axis -> order; it defaults to
    ``noise.quad_order``.
    """
    axes = list(axes)
    if not axes:
        raise ValueError("need at least one noise axis")
    for a in axes:
        if a not in AXES:
            raise ValueError(f"unknown axis {a!r}")
    sig = dict(zip(AXES, noise.sigmas))
    rules = []
    for a in axes:
        q = order.get(a, noise.quad_order) if isinstance(order, dict) else (order or noise.quad_order)
        rules.append(gauss_hermite_rule(q, sig[a]))
    nodes, weights = [], []
    for combo in itertools.product(*[range(len(r[0])) for r in rules]):
        off = np.zeros(len(AXES))
        w = 1.0
        for a, rule, i in zip(axes, rules, combo):
            off[AXES.index(a)] = rule[0][i]
            w *= rule[1][i]
        nodes.append(off)
        weights.append(w)
    return QuasistaticEnsemble(np.array(nodes), np.array(weights))


# ---------------------------------------------------------------------------
# white-noise Lindblad propagation


@dataclass
class LindbladResult:
    superoperator: np.ndarray  # (36, 36), row-major vectorisation
    process: np.ndarray  # (16, 16) computational block

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return (self.superoperator @ rho.reshape(-1)).reshape(6, 6)


def liouvillians(h: np.ndarray, a: np.ndarray, gamma: float) -> np.ndarray:
    """Row-major Liouvillians for Hamiltonians (..., 6, 6) and couplings (..., C, 6, 6)."""
    eye = np.eye(h.shape[-1])

    def kron(x, y):
        out = np.einsum("...ij,...kl->...ikjl", x, y)
        return out.reshape(out.shape[:-4] + (36, 36))

    lv = -1j * (kron(h, eye) - kron(eye, np.swapaxes(h, -1, -2)))
    a2 = np.swapaxes(a, -1, -2).conj() @ a
    diss = (kron(a, a.conj()) - 0.5 * kron(a2, eye)
            - 0.5 * kron(eye, np.swapaxes(a2, -1, -2)))
    return lv + gamma * diss.sum(axis=-3)


def computational_block(superop: np.ndarray) -> np.ndarray:
    s = superop.reshape(6, 6, 6, 6)[:4, :4, :4, :4]
    return s.reshape(16, 16)


def lindblad_propagate(traces: RenderedTraces, grads: sm.MagneticGradients,
                       model: sm.DeviceModel, noise: NoiseModel) -> LindbladResult:
    """Piecewise-constant integration of the white-noise master equation.

    Every detuning channel couples through d H / d eps with rate S0/2.
    """
    if not traces.dt_fine > 0:
        raise ValueError("dt_fine must be positive")
    coef = sm.coefficients(traces.eps, grads, model)
    h = sm.batch_hamiltonians(coef)
    a = sm.batch_sensitivities(coef, model)
    steps = expm(liouvillians(h, a, noise.gamma) * traces.dt_fine)
    total = prefix_products(steps)[-1]
    return LindbladResult(total, computational_block(total))


def white_noise_infidelity(sd: StepData, gamma: float, program: Optional[PulseProgram] = None,
                           kernel: Optional[ImpulseResponse] = None, with_gradient: bool = False):
    """First-order white-noise infidelity with its sample gradient.

    Uses the toggling-frame expansion of the Lindblad process to first order
    in ``gamma`` with the trapezoidal rule per fine step.  The gradient is
    returned as a (3, n) array over all samples when requested.
    """
    d = 4
    kappa = gamma / (d * (d + 1))
    m_steps = sd.u.shape[0]
    q = np.empty((m_steps + 1, 6, 6), complex)
    q[0] = np.eye(6)
    q[1:] = sd.prefix
    p0 = np.diag([1.0, 1, 1, 1, 0, 0])
    pi = q @ p0 @ np.swapaxes(q, -1, -2).conj()  # (M+1, 6, 6)
    a = sd.a  # (M, 3, 6, 6)
    half = 0.5 * sd.dt * kappa

    def g(p, a_):
        ap = a_ @ p
        return (d + 1) * _tr(a_ @ ap) - _tr(ap @ ap) - _tr(ap) ** 2

    lo = g(pi[:-1, None], a)
    hi = g(pi[1:, None], a)
    total = float(np.real(half * (lo + hi).sum()))
    if not with_gradient:
        return total, None

    def big_g(p, a_):
        return (d + 1) * a_ @ a_ - 2 * a_ @ p @ a_ - 2 * _tr(a_ @ p)[..., None, None] * a_

    def g_a(p, a_):
        ap = a_ @ p
        pa = p @ a_
        return (d + 1) * (ap + pa) - 2 * p @ a_ @ p - 2 * _tr(ap)[..., None, None] * p

    s = np.zeros((m_steps + 1, 6, 6), complex)
    s[:-1] += half * big_g(pi[:-1, None], a).sum(axis=1)
    s[1:] += half * big_g(pi[1:, None], a).sum(axis=1)
    pulled = np.swapaxes(q, -1, -2).conj() @ s @ q
    c = np.cumsum(pulled[::-1], axis=0)[::-1]
    lam = q @ c @ np.swapaxes(q, -1, -2).conj()  # (M+1, 6, 6)

    # direct dependence through the coupling operators
    da = sm.batch_sensitivity_derivatives(sd.coef, sd.model)  # (M, 3, 3, 6, 6)
    ga = half * (g_a(pi[:-1, None], a) + g_a(pi[1:, None], a))  # (M, 3, 6, 6)
    direct = np.einsum("mcij,mcdji->md", ga, da)
    # dependence through the step unitaries
    y = np.swapaxes(sd.v, -1, -2) @ pi[:-1] @ np.swapaxes(sd.u, -1, -2).conj() @ lam[1:] @ sd.v
    k = sd.step_derivative_eigen()
    via_u = 2 * np.einsum("mba,mcab->mc", y, k)
    grad_x = np.real(direct + via_u)  # (M, 3)
    grad = sample_gradients(grad_x, program.n, program.fs, kernel)
    return total, grad


def _tr(x):
    return np.trace(x, axis1=-2, axis2=-1)


# ---------------------------------------------------------------------------
# colored noise


def colored_noise_trace(noise: NoiseModel, dt: float, n_steps: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Stationary Gaussian trace in V with single-sided PSD S0 (f/1 MHz)^-alpha.

    Frequency-domain synthesis on the periodic grid of ``n_steps`` points with
    spacing ``dt`` ns; power outside ``noise.band`` is zero.
    """
    if n_steps < 2 or not dt > 0:
        raise ValueError("need at least two steps and a positive dt")
    f_low, f_high = noise.band(dt, n_steps)
    dt_s = dt * 1e-9
    resolution = 1 / (n_steps * dt_s)
    nyquist = 1 / (2 * dt_s)
    if f_low != 0 and f_low < resolution * (1 - 1e-9):
        raise ValueError("f_low below the frequency resolution of the grid")
    if f_low > nyquist:
        raise ValueError("band lies above the Nyquist frequency")
    f = np.fft.rfftfreq(n_steps, dt_s)
    inside = (f >= f_low * (1 - 1e-12)) & (f <= f_high * (1 + 1e-12))
    if f_low > 0:
        inside &= f > 0
    s = np.where(inside, noise.psd(np.where(f > 0, f, F_REF)), 0.0)
    scale = np.sqrt(s * n_steps / (2 * dt_s))
    z = (rng.standard_normal(f.size) + 1j * rng.standard_normal(f.size)) / np.sqrt(2)
    # DC and Nyquist bins are real
    z[0] = z[0].real * np.sqrt(2)
    if n_steps % 2 == 0:
        z[-1] = z[-1].real * np.sqrt(2)
    return np.fft.irfft(scale * z, n=n_steps)


def periodogram(x: np.ndarray, dt: float):
    """Single-sided periodogram (V^2/Hz) of traces along the last axis."""
    dt_s = dt * 1e-9
    n = x.shape[-1]
    spec = np.abs(np.fft.rfft(x, axis=-1)) ** 2 * 2 * dt_s / n
    spec[..., 0] /= 2
    if n % 2 == 0:
        spec[..., -1] /= 2
    return np.fft.rfftfreq(n, dt_s), spec


def psd_table(noise: NoiseModel, dt: float, n_steps: int):
    """(f_Hz, S_V2perHz) on the synthesis grid, zero outside the band."""
    f = np.fft.rfftfreq(n_steps, dt * 1e-9)
    f_low, f_high = noise.band(dt, n_steps)
    inside = (f >= f_low) & (f <= f_high) & ((f > 0) | (f_low == 0))
    return f, np.where(inside, noise.psd(np.where(f > 0, f, F_REF)), 0.0)


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass
class MonteCarloEnsemble:
    v_c: np.ndarray  # (R, 4, 4)
    l_c: np.ndarray  # (R,)
    sources: tuple
    seed: int

    def __len__(self):
        return len(self.l_c)


def realization_stream(seed: int, r: int) -> np.random.Generator:
    """Counter-based substream for realisation ``r``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(r)])))


def draw_realization(noise: NoiseModel, sources, dt: float, n_steps: int, seed: int, r: int):
    rng = realization_stream(seed, r)
    eps = rng.standard_normal(3) * np.array(noise.sigma_eps)
    db = rng.standard_normal(3) * np.array(noise.sigma_db)
    fast = None
    if "fast" in sources and noise.s0 > 0:
        fast = np.stack([colored_noise_trace(noise, dt, n_steps, rng) for _ in range(3)]) * 1e3
    if "qs_eps" not in sources:
        eps = np.zeros(3)
    if "qs_db" not in sources:
        db = np.zeros(3)
    return eps, db, fast


def _mc_chunk(args):
    traces, grads, model, noise, sources, seed, rs = args
    eps, db, fast = [], [], []
    for r in rs:
        e, b, f = draw_realization(noise, sources, traces.dt_fine, traces.n_steps, seed, r)
        eps.append(e)
        db.append(b)
        fast.append(f)
    noise_arr = None if fast[0] is None else np.stack(fast)
    v = evolve_batch(traces, grads, model, np.array(eps), np.array(db), noise_arr)
    return v[:, :4, :4]


def monte_carlo_evaluate(program: PulseProgram, grads: sm.MagneticGradients,
                         model: sm.DeviceModel, noise: NoiseModel, sources=SOURCES,
                         n_real: int = 1000, seed: int = 0,
                         kernel: Optional[ImpulseResponse] = None, workers: int = 1,
                         chunk: int = 25) -> MonteCarloEnsemble:
    """Propagators for ``n_real`` noise realisations.

    Realisation ``r`` draws from the substream ``(seed, r)`` in a fixed order
    (quasistatic detunings, quasistatic gradients, fast traces), so the result
    does not depend on ``workers`` or ``chunk``.
    """
    if n_real < 1:
        raise ValueError("n_real must be positive")
    sources = tuple(s for s in SOURCES if s in set(sources))
    kernel = kernel or default_impulse_response(program.fs)
    traces = render(program, kernel)
    blocks = [range(i, min(i + chunk, n_real)) for i in range(0, n_real, chunk)]
    jobs = [(traces, grads, model, noise, sources, seed, b) for b in blocks]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_mc_chunk, jobs))
    else:
        parts = [_mc_chunk(j) for j in jobs]
    v_c = np.concatenate(parts)
    l_c = 1 - np.real(np.einsum("rij,rij->r", v_c.conj(), v_c)) / 4
    return MonteCarloEnsemble(v_c, l_c, sources, seed)
