"""Piecewise-constant propagation on the m_s=0 subspace with analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import spin_model as sm
from .pulses import RenderedTraces, render_matrix, PulseProgram, ImpulseResponse

DEGENERACY_TOL = 1e-6
_E = np.eye(6)[:, :4]


@dataclass
class PropagationResult:
    v_full: np.ndarray
    v_c: np.ndarray
    u_c: Optional[np.ndarray]
    l_c: float
    delta: Optional[np.ndarray]
    degenerate: bool = False

    @property
    def delta_norm(self) -> float:
        return float(np.linalg.norm(self.delta)) if self.delta is not None else float("nan")


@dataclass
class PropagationGradient:
    """Derivatives with respect to the samples of each channel.

    Arrays are indexed ``[channel, k, ...]`` over all samples; ``free`` marks
    the entries that are optimisation parameters.
    """

    v_full: np.ndarray  # (3, n, 6, 6)
    v_c: np.ndarray  # (3, n, 4, 4)
    u_c: Optional[np.ndarray]  # (3, n, 4, 4)
    l_c: np.ndarray  # (3, n)
    free: np.ndarray  # (3, n) bool
    fallback: np.ndarray  # (3, n) bool, entries computed by finite differences

    def flat(self, name: str) -> np.ndarray:
        """Gradient restricted to free samples, parameters first."""
        return getattr(self, name)[self.free]


# ---------------------------------------------------------------------------
# elementary pieces


def step_unitary(h, dt: float) -> np.ndarray:
    """exp(-i h dt) for a Hermitian matrix (or a batch) via eigendecomposition."""
    h = np.asarray(h)
    if np.max(np.abs(h - np.swapaxes(h, -1, -2).conj()), initial=0.0) > 1e-10:
        raise ValueError("Hamiltonian is not Hermitian")
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * dt)[..., None, :]) @ np.swapaxes(v, -1, -2).conj()


def coherent_leakage(v_c) -> float:
    v_c = np.asarray(v_c)
    return float(1 - np.real(np.trace(v_c.conj().T @ v_c)) / 4)


def closest_unitary(v_c, target=None):
    """Polar unitary of ``v_c`` with the global phase aligned to ``target``.

    Returns (unitary, singular values).
    """
    w, s, xh = np.linalg.svd(v_c)
    u = w @ xh
    if target is not None:
        overlap = np.trace(np.asarray(target).conj().T @ u)
        if abs(overlap) > 0:
            u = u * np.exp(-1j * np.angle(overlap))
    return u, s


def _divided_differences(w: np.ndarray, dt: float) -> np.ndarray:
    """(exp(-i w_a dt) - exp(-i w_b dt)) / (w_a - w_b), with the confluent limit."""
    wa = w[..., :, None]
    wb = w[..., None, :]
    diff = wa - wb
    return -1j * dt * np.exp(-0.5j * (wa + wb) * dt) * np.sinc(diff * dt / (2 * np.pi))


def prefix_products(u: np.ndarray) -> np.ndarray:
    """P[m] = u[m] @ u[m-1] @ ... @ u[0] by a doubling scan."""
    p = u.copy()
    s = 1
    while s < len(p):
        p[s:] = p[s:] @ p[:-s]
        s *= 2
    return p


def suffix_products(u: np.ndarray) -> np.ndarray:
    """S[m] = u[M-1] @ ... @ u[m]."""
    s_ = u.copy()
    s = 1
    while s < len(s_):
        s_[:-s] = s_[s:] @ s_[:-s]
        s *= 2
    return s_


def total_product(u: np.ndarray) -> np.ndarray:
    """u[M-1] @ ... @ u[0] by pairwise reduction over the leading step axis.

    ``u`` may carry extra leading batch axes before the step axis (..., M, d, d).
    """
    while u.shape[-3] > 1:
        if u.shape[-3] % 2:
            head = u[..., -1:, :, :]
            body = u[..., :-1, :, :]
            red = body[..., 1::2, :, :] @ body[..., 0::2, :, :]
            u = np.concatenate([red, head], axis=-3)
        else:
            u = u[..., 1::2, :, :] @ u[..., 0::2, :, :]
    return u[..., 0, :, :]


# ---------------------------------------------------------------------------
# noise-free and offset evolution


def _effective(traces: RenderedTraces, grads, model, eps_offsets=None, db_offsets=None,
               eps_noise=None):
    eps = traces.eps
    if eps_offsets is not None:
        eps = eps + np.asarray(eps_offsets, float)[:, None]
    if eps_noise is not None:
        eps = eps + eps_noise
    g = grads.as_array()
    if db_offsets is not None:
        g = g + np.asarray(db_offsets, float)
    return eps, g


def _finish(v_full, target) -> PropagationResult:
    v_c = v_full[:4, :4]
    l_c = coherent_leakage(v_c)
    u_c, s = closest_unitary(v_c, None if target is None else target.matrix)
    degenerate = bool(s.min() < DEGENERACY_TOL)
    delta = None if target is None else target.matrix - u_c
    if degenerate:
        u_c, delta = None, None
    return PropagationResult(v_full, v_c, u_c, l_c, delta, degenerate)


def propagate_hamiltonians(h: np.ndarray, dt: float) -> np.ndarray:
    """Ordered product of the step exponentials of a (..., M, 6, 6) batch."""
    w, v = np.linalg.eigh(h)
    u = (v * np.exp(-1j * w * dt)[..., None, :]) @ np.swapaxes(v, -1, -2)
    return total_product(u)


def evolve(traces: RenderedTraces, grads: sm.MagneticGradients, model: sm.DeviceModel,
           target: Optional[sm.GateTarget] = None, eps_offsets=None, db_offsets=None,
           eps_noise=None) -> PropagationResult:
    """Propagate the rendered traces.

    ``eps_offsets`` (3,) and ``db_offsets`` (3,) are static shifts of the
    detunings (mV) and gradients (rad/ns); ``eps_noise`` (3, M) is added to the
    detuning traces step by step.
    """
    if not traces.dt_fine > 0:
        raise ValueError("dt_fine must be positive")
    eps, g = _effective(traces, grads, model, eps_offsets, db_offsets, eps_noise)
    h = sm.batch_hamiltonians(sm.coefficients(eps, g, model))
    return _finish(propagate_hamiltonians(h, traces.dt_fine), target)


def evolve_batch(traces: RenderedTraces, grads: sm.MagneticGradients, model: sm.DeviceModel,
                 eps_offsets: np.ndarray, db_offsets: np.ndarray,
                 eps_noise: Optional[np.ndarray] = None) -> np.ndarray:
    """Full propagators for R noise configurations, shape (R, 6, 6).

    ``eps_offsets`` and ``db_offsets`` have shape (R, 3); ``eps_noise`` has
    shape (R, 3, M) or is None.
    """
    eps = traces.eps[None] + eps_offsets[:, :, None]
    if eps_noise is not None:
        eps = eps + eps_noise
    g = grads.as_array()[None] + db_offsets
    r, _, m = eps.shape
    coef = np.stack([
        sm.coefficients(eps[i], np.broadcast_to(g[i][:, None], (3, m)), model) for i in range(r)
    ])
    h = sm.batch_hamiltonians(coef)
    return propagate_hamiltonians(h, traces.dt_fine)


# ---------------------------------------------------------------------------
# gradients


@dataclass
class StepData:
    """Per-step quantities shared by the gradient computations."""

    dt: float
    w: np.ndarray  # (M, 6) eigenvalues
    v: np.ndarray  # (M, 6, 6) real eigenvectors
    u: np.ndarray  # (M, 6, 6) step unitaries
    a: np.ndarray  # (M, 3, 6, 6) sensitivities d H / d eps_c
    coef: np.ndarray  # (M, 7)
    prefix: np.ndarray  # (M, 6, 6) U_m ... U_0
    phi: np.ndarray  # (M, 6, 6) divided differences
    model: sm.DeviceModel

    @property
    def total(self) -> np.ndarray:
        return self.prefix[-1]

    def before(self) -> np.ndarray:
        """Propagator up to the start of each step, (M, 6, 6)."""
        out = np.empty_like(self.prefix)
        out[0] = np.eye(6)
        out[1:] = self.prefix[:-1]
        return out

    def after(self) -> np.ndarray:
        """Propagator from the end of each step to the end, (M, 6, 6)."""
        # U_T = after[m] @ U_m @ before[m]
        return self.total[None] @ np.swapaxes(self.prefix, -1, -2).conj()

    def step_derivative_eigen(self) -> np.ndarray:
        """Fréchet kernels Phi * (V^T A_c V) in the eigenbasis, (M, 3, 6, 6)."""
        vt = np.swapaxes(self.v, -1, -2)[:, None]
        a_eig = vt @ self.a @ self.v[:, None]
        return self.phi[:, None] * a_eig


def step_data(eps: np.ndarray, g: np.ndarray, model: sm.DeviceModel, dt: float) -> StepData:
    coef = sm.coefficients(eps, np.broadcast_to(np.asarray(g, float).reshape(3, 1), eps.shape), model)
    h = sm.batch_hamiltonians(coef)
    w, v = np.linalg.eigh(h)
    u = (v * np.exp(-1j * w * dt)[:, None, :]) @ np.swapaxes(v, -1, -2)
    return StepData(dt, w, v, u, sm.batch_sensitivities(coef, model), coef,
                    prefix_products(u), _divided_differences(w, dt), model)


def full_step_gradients(sd: StepData) -> np.ndarray:
    """d U_T / d eps_c(step m) for every fine step, shape (M, 3, 6, 6)."""
    left = sd.after() @ sd.v  # (M, 6, 6)
    right = np.swapaxes(sd.v, -1, -2) @ sd.before()
    k = sd.step_derivative_eigen()
    return left[:, None] @ k @ right[:, None]


def sample_gradients(step_grads: np.ndarray, n: int, fs: float, kernel: ImpulseResponse) -> np.ndarray:
    """Chain rule through zero-order hold and convolution: (M, 3, ...) -> (3, n, ...)."""
    d = render_matrix(n, fs, kernel)  # (M, n)
    m = step_grads.shape[0]
    out = d.T @ step_grads.reshape(m, -1)  # (n, 3 * ...)
    out = out.reshape((n,) + step_grads.shape[1:])
    return np.moveaxis(out, 0, 1)


def polar_differential(v_c: np.ndarray, dv: np.ndarray, target: np.ndarray):
    """Differential of the phase-aligned polar unitary for a batch of directions.

    ``dv`` has shape (..., 4, 4).  Returns (du, singular values).
    """
    w, s, xh = np.linalg.svd(v_c)
    x = xh.conj().T
    up = w @ xh
    k = w.conj().T @ dv @ x
    omega = (k - np.swapaxes(k, -1, -2).conj()) / (s[:, None] + s[None, :])
    dup = w @ omega @ xh
    overlap = np.trace(target.conj().T @ up)
    phase = np.exp(-1j * np.angle(overlap))
    d_overlap = np.einsum("ij,...ij->...", target.conj(), dup)
    dphi = -np.imag(d_overlap / overlap)
    du = phase * (dup + 1j * dphi[..., None, None] * up)
    return du, s


def evolve_with_gradient(traces: RenderedTraces, grads: sm.MagneticGradients,
                         model: sm.DeviceModel, program: PulseProgram, kernel: ImpulseResponse,
                         target: Optional[sm.GateTarget] = None, free=None,
                         eps_offsets=None, db_offsets=None):
    """Propagation result plus derivatives with respect to every AWG sample.

    ``free`` defaults to the program's free mask; frozen samples get zero
    entries and are excluded from :meth:`PropagationGradient.flat`.
    """
    eps, g = _effective(traces, grads, model, eps_offsets, db_offsets)
    sd = step_data(eps, g, model, traces.dt_fine)
    result = _finish(sd.total.copy(), target)
    free = program.free if free is None else np.asarray(free, bool)
    step_grads = full_step_gradients(sd)
    dv_full = sample_gradients(step_grads, program.n, program.fs, kernel)
    dv_full = np.where(free[:, :, None, None], dv_full, 0)
    dv_c = dv_full[..., :4, :4]
    dl = -np.real(np.einsum("ij,ckij->ck", result.v_c.conj(), dv_c)) / 2
    fallback = np.zeros(free.shape, bool)
    du = None
    if target is not None:
        w, s, xh = np.linalg.svd(result.v_c)
        if s.min() < DEGENERACY_TOL:
            du, fallback = _fd_polar(traces, grads, model, program, kernel, target, free,
                                     eps_offsets, db_offsets)
        else:
            du, _ = polar_differential(result.v_c, dv_c, target.matrix)
            du = np.where(free[:, :, None, None], du, 0)
    return result, PropagationGradient(dv_full, dv_c, du, dl, free, fallback)


def _fd_polar(traces, grads, model, program, kernel, target, free, eps_offsets, db_offsets,
              h=1e-4):
    """Central differences of the polar unitary for near-singular truncations."""
    from .pulses import render

    du = np.zeros(free.shape + (4, 4), complex)
    for c, k in zip(*np.nonzero(free)):
        vals = []
        for sign in (1, -1):
            p = program.copy()
            p.samples[c, k] += sign * h
            v = evolve(render(p, kernel), grads, model, None, eps_offsets, db_offsets).v_c
            vals.append(closest_unitary(v, target.matrix)[0])
        du[c, k] = (vals[0] - vals[1]) / (2 * h)
    return du, free.copy()
