"""Multi-start Levenberg-Marquardt synthesis of pulse programs."""
from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import spin_model as sm
from .fidelity import EvaluationReport
from .noise import AXES, NoiseModel, gauss_hermite_rule, white_noise_infidelity
from .propagator import evolve_batch, evolve_with_gradient, step_data
from .pulses import (ImpulseResponse, PulseProgram, default_impulse_response, render,
                     validate)

RESIDUAL_LABELS = ("delta", "i_b", "i_s", "i_f", "l_c")


@dataclass(frozen=True)
class Weights:
    delta: float = 1.0
    i_b: float = 1.0
    i_s: float = 1.0
    i_f: float = 1.0
    l_c: float = 1.0

    def __post_init__(self):
        for name in RESIDUAL_LABELS:
            if getattr(self, name) < 0:
                raise ValueError(f"weight {name} must be non-negative")

    @classmethod
    def noiseless(cls) -> "Weights":
        return cls(i_b=0.0, i_s=0.0, i_f=0.0)


@dataclass(frozen=True)
class LMSettings:
    max_iter: int = 10_000
    residual_tol: float = 1e-8
    step_tol: float = 1e-10
    mu_init: float = 1e-6  # relative to the largest diagonal entry of J^T J
    mu_up: float = 10.0
    mu_down: float = 10.0
    mu_max: float = 1e12
    checkpoint_every: int = 0


@dataclass
class OptimizationProblem:
    """Everything needed to evaluate the synthesis objective.

    ``template`` fixes the sample count, the sample rate and which samples are
    free; its frozen samples keep their values throughout.  ``stop_delta`` and
    ``stop_leakage`` optionally end a run early once both are reached.
    ``seed_high`` caps the detuning of random starting points; a low cap starts
    from weak exchange, which suits noise-aware runs.
    """

    target: sm.GateTarget
    model: sm.DeviceModel
    grads: sm.MagneticGradients
    noise: NoiseModel
    template: PulseProgram
    weights: Weights = field(default_factory=Weights)
    settings: LMSettings = field(default_factory=LMSettings)
    kernel: Optional[ImpulseResponse] = None
    stop_delta: Optional[float] = None
    stop_leakage: Optional[float] = None
    seed_high: Optional[float] = None

    def __post_init__(self):
        if self.template.n < 1:
            raise ValueError("need at least one sample")
        if not self.template.free.any():
            raise ValueError("no free samples")
        if self.kernel is None:
            self.kernel = default_impulse_response(self.template.fs)

    @classmethod
    def build(cls, target, model, grads, noise, n: int, fs: Optional[float] = None,
              frozen_channels=(), **kwargs) -> "OptimizationProblem":
        fs = model.fs if fs is None else fs
        template = PulseProgram.idle(n, model, frozen_channels=frozen_channels)
        template = replace(template, fs=fs)
        return cls(target, model, grads, noise, template, **kwargs)

    @property
    def n_params(self) -> int:
        return int(self.template.free.sum())

    def to_samples(self, theta) -> np.ndarray:
        """Map unconstrained parameters to samples strictly inside the bounds."""
        lo, hi = self.model.eps_min, self.model.eps_max
        with np.errstate(over="ignore"):  # exp overflow saturates to lo, as intended
            x = lo + (hi - lo) / (1 + np.exp(-np.asarray(theta, float)))
        return np.clip(x, np.nextafter(lo, hi), np.nextafter(hi, lo))

    def from_samples(self, x) -> np.ndarray:
        lo, hi = self.model.eps_min, self.model.eps_max
        u = (np.asarray(x, float) - lo) / (hi - lo)
        u = np.clip(u, 1e-12, 1 - 1e-12)
        return np.log(u / (1 - u))

    def sample_slope(self, theta) -> np.ndarray:
        lo, hi = self.model.eps_min, self.model.eps_max
        x = self.to_samples(theta)
        return (x - lo) * (hi - x) / (hi - lo)

    def program(self, theta) -> PulseProgram:
        return self.template.with_free_values(self.to_samples(theta))

    def random_theta(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        lo, hi = self.model.eps_min, self.model.eps_max
        if self.seed_high is not None:
            if not lo < self.seed_high <= hi:
                raise ValueError("seed_high must lie inside the detuning bounds")
            hi = self.seed_high
        return self.from_samples(rng.uniform(lo, hi, self.n_params))

    def quadrature_nodes(self, source: str):
        """Additive Gauss-Hermite nodes for one quasistatic source.

        Returns offsets (K, 6) in ``AXES`` order and weights (K,).  The
        centre node is dropped since it contributes nothing to the excess
        infidelity.  Averaging per axis is exact to second order in the noise
        because cross terms of independent zero-mean offsets vanish.
        """
        if source == "i_s":
            axes = [a for a, c in zip(AXES[:3], sm.CHANNELS)
                    if not (c == 23 and self.model.residual_j23 is not None)]
        else:
            axes = list(AXES[3:])
        sig = dict(zip(AXES, self.noise.sigmas))
        offsets, weights = [], []
        for a in axes:
            if sig[a] == 0:
                continue
            x, w = gauss_hermite_rule(self.noise.quad_order, sig[a])
            for xi, wi in zip(x, w):
                if abs(xi) < 1e-15 * sig[a]:
                    continue
                off = np.zeros(len(AXES))
                off[AXES.index(a)] = xi
                offsets.append(off)
                weights.append(wi)
        return np.array(offsets).reshape(-1, len(AXES)), np.array(weights)


# ---------------------------------------------------------------------------
# objective


def _fid(u, v):
    t = np.trace(u.conj().T @ v)
    return (abs(t) ** 2 + np.real(np.vdot(v, v))) / 20


def _dfid(u, v, du, dv):
    """Derivative of the Haar fidelity for stacks of perturbations (P, 4, 4)."""
    t = np.trace(u.conj().T @ v)
    dt = np.einsum("pji,ji->p", du.conj(), v) + np.einsum("ji,pji->p", u.conj(), dv)
    dn = np.einsum("ij,pij->p", v.conj(), dv)
    return (2 * np.real(np.conj(t) * dt) + 2 * np.real(dn)) / 20


def _sqrt_residual(value, grad, weight):
    if value <= 0:
        return 0.0, np.zeros_like(grad)
    root = np.sqrt(value)
    return weight * root, weight * grad / (2 * root)


@dataclass
class ObjectiveTerms:
    """Unweighted pieces of the objective at one parameter vector."""

    delta: np.ndarray
    l_c: float
    i_s: float
    i_b: float
    i_f: float

    @property
    def delta_norm(self) -> float:
        return float(np.linalg.norm(self.delta))


def objective_terms(theta, problem: OptimizationProblem) -> ObjectiveTerms:
    """Evaluate Delta, L_c and the surrogate infidelities without derivatives."""
    program = problem.program(theta)
    traces = render(program, problem.kernel)
    w = problem.weights
    sources = [s for s in ("i_s", "i_b") if getattr(w, s) > 0]
    node_sets = {s: problem.quadrature_nodes(s) for s in sources}
    offsets = np.concatenate([np.zeros((1, 6))] + [node_sets[s][0] for s in sources])
    v = evolve_batch(traces, problem.grads, problem.model, offsets[:, :3], offsets[:, 3:])
    v_c = v[:, :4, :4]
    wmat, s, xh = np.linalg.svd(v_c[0])
    u_c = wmat @ xh
    overlap = np.trace(problem.target.matrix.conj().T @ u_c)
    if abs(overlap) > 0:
        u_c = u_c * np.exp(-1j * np.angle(overlap))
    l_c = float(1 - np.real(np.vdot(v_c[0], v_c[0])) / 4)
    f0 = _fid(u_c, v_c[0])
    out = {"i_s": 0.0, "i_b": 0.0, "i_f": 0.0}
    start = 1
    for src in sources:
        nw = node_sets[src][1]
        out[src] = float(sum(wi * (f0 - _fid(u_c, v_c[start + i])) for i, wi in enumerate(nw)))
        start += len(nw)
    if w.i_f > 0 and problem.noise.gamma > 0:
        sd = step_data(traces.eps, problem.grads.as_array(), problem.model, traces.dt_fine)
        out["i_f"] = white_noise_infidelity(sd, problem.noise.gamma)[0]
    return ObjectiveTerms(problem.target.matrix - u_c, l_c, **out)


def _stack(terms: ObjectiveTerms, w: Weights) -> np.ndarray:
    parts = [w.delta * terms.delta.real.ravel(), w.delta * terms.delta.imag.ravel()]
    for name in ("i_b", "i_s", "i_f", "l_c"):
        if getattr(w, name) > 0:
            parts.append([getattr(w, name) * np.sqrt(max(getattr(terms, name), 0.0))])
    return np.concatenate([np.atleast_1d(np.asarray(p, float)) for p in parts])


def residuals(theta, problem: OptimizationProblem) -> np.ndarray:
    """Stacked residual vector whose squared norm is the weighted objective.

    Order: Re Delta (16), Im Delta (16), then sqrt I_b, sqrt I_s, sqrt I_f and
    sqrt L_c for every term with a positive weight.
    """
    return _stack(objective_terms(theta, problem), problem.weights)


def residuals_and_jacobian(theta, problem: OptimizationProblem):
    """Residual vector and its analytic Jacobian with respect to ``theta``."""
    program = problem.program(theta)
    kernel = problem.kernel
    traces = render(program, kernel)
    free = program.free
    w = problem.weights
    res, gr = evolve_with_gradient(traces, problem.grads, problem.model, program, kernel,
                                   problem.target, free)
    if res.degenerate:
        raise FloatingPointError("truncated propagator is singular")
    u_c, v_c = res.u_c, res.v_c
    du, dv = gr.flat("u_c"), gr.flat("v_c")
    f0 = _fid(u_c, v_c)
    df0 = _dfid(u_c, v_c, du, dv)
    values = {"l_c": res.l_c}
    derivs = {"l_c": gr.flat("l_c")}
    for src, offset_axes in (("i_s", slice(0, 3)), ("i_b", slice(3, 6))):
        if getattr(w, src) == 0:
            continue
        offsets, nw = problem.quadrature_nodes(src)
        total, dtotal = 0.0, np.zeros(problem.n_params)
        for off, wi in zip(offsets, nw):
            r_k, g_k = evolve_with_gradient(traces, problem.grads, problem.model, program, kernel,
                                            None, free, eps_offsets=off[:3], db_offsets=off[3:])
            total += wi * (f0 - _fid(u_c, r_k.v_c))
            dtotal += wi * (df0 - _dfid(u_c, r_k.v_c, du, g_k.flat("v_c")))
        values[src], derivs[src] = total, dtotal
    if w.i_f > 0 and problem.noise.gamma > 0:
        sd = step_data(traces.eps, problem.grads.as_array(), problem.model, traces.dt_fine)
        val, g = white_noise_infidelity(sd, problem.noise.gamma, program, kernel, True)
        values["i_f"], derivs["i_f"] = val, g[free]
    else:
        values["i_f"], derivs["i_f"] = 0.0, np.zeros(problem.n_params)

    rows = [w.delta * (-du).real.reshape(len(du), 16).T, w.delta * (-du).imag.reshape(len(du), 16).T]
    vec = [w.delta * res.delta.real.ravel(), w.delta * res.delta.imag.ravel()]
    for name in ("i_b", "i_s", "i_f", "l_c"):
        if getattr(w, name) > 0:
            r, j = _sqrt_residual(values.get(name, 0.0), derivs.get(name, np.zeros(problem.n_params)),
                                  getattr(w, name))
            vec.append([r])
            rows.append(j[None])
    jac = np.vstack(rows) * problem.sample_slope(theta)[None, :]
    return np.concatenate([np.atleast_1d(np.asarray(v, float)) for v in vec]), jac


def jacobian(theta, problem: OptimizationProblem) -> np.ndarray:
    return residuals_and_jacobian(theta, problem)[1]


# ---------------------------------------------------------------------------
# Levenberg-Marquardt


@dataclass
class LMResult:
    x: np.ndarray
    cost: float  # residual norm
    history: list
    iterations: int
    reason: str
    mu: float

    @property
    def converged(self) -> bool:
        return self.reason != "max_iter"


def levenberg_marquardt(fun: Callable, fun_jac: Callable, x0, settings: LMSettings = LMSettings(),
                        stop: Optional[Callable] = None, mu0: Optional[float] = None,
                        start_iter: int = 0, on_iteration: Optional[Callable] = None) -> LMResult:
    """Damped Gauss-Newton with multiplicative damping updates.

    ``fun(x)`` returns residuals, ``fun_jac(x)`` residuals and Jacobian.  A
    trial step is accepted only if it strictly lowers the residual norm; then
    the damping is divided by ``mu_down``, otherwise multiplied by ``mu_up``.
    ``stop(x, r)`` may end the run early.
    """
    x = np.array(x0, float)
    r, j = fun_jac(x)
    cost = float(np.linalg.norm(r))
    history = [cost]
    diag_max = float(np.max(np.sum(j * j, axis=0), initial=0.0)) or 1.0
    mu = settings.mu_init * diag_max if mu0 is None else mu0
    it = start_iter
    reason = "max_iter"
    if cost < settings.residual_tol:
        return LMResult(x, cost, history, it, "residual_tol", mu)
    if stop is not None and stop(x, r):
        return LMResult(x, cost, history, it, "target", mu)
    eye = np.eye(len(x))
    while it < settings.max_iter:
        it += 1
        a = np.vstack([j, np.sqrt(mu) * eye])
        b = np.concatenate([-r, np.zeros(len(x))])
        step = np.linalg.lstsq(a, b, rcond=None)[0]
        if np.linalg.norm(step) < settings.step_tol * (1 + np.linalg.norm(x)):
            reason = "step_tol"
            break
        trial = x + step
        try:
            r_trial = fun(trial)
            cost_trial = float(np.linalg.norm(r_trial))
        except FloatingPointError:
            cost_trial = np.inf
        if cost_trial < cost:
            x = trial
            r, j = fun_jac(x)
            cost = float(np.linalg.norm(r))
            history.append(cost)
            mu = max(mu / settings.mu_down, 1e-300)
            if cost < settings.residual_tol:
                reason = "residual_tol"
                break
            if stop is not None and stop(x, r):
                reason = "target"
                break
        else:
            mu *= settings.mu_up
            if mu > settings.mu_max:
                reason = "damping"
                break
        if on_iteration is not None:
            on_iteration(it, x, mu)
    return LMResult(x, cost, history, it, reason, mu)


# ---------------------------------------------------------------------------
# synthesis


@dataclass
class SeedResult:
    seed: int
    residual: float
    delta_norm: float
    l_c: float
    iterations: int
    reason: str
    theta: np.ndarray = field(repr=False)

    def row(self) -> dict:
        return {"seed": self.seed, "residual": self.residual, "delta_norm": self.delta_norm,
                "l_c": self.l_c, "iterations": self.iterations, "reason": self.reason}


@dataclass
class OptimizationOutcome:
    program: PulseProgram
    history: list
    per_seed: list
    converged: bool
    best_seed: int
    report: Optional[EvaluationReport] = None

    @property
    def residual(self) -> float:
        return self.history[-1]


def save_checkpoint(path, theta, iteration: int, damping: float, seed: Optional[int] = None):
    data = {"theta": np.asarray(theta).tolist(), "iteration": int(iteration),
            "damping": float(damping), "seed": seed}
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(data))
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    data = json.loads(Path(path).read_text())
    data["theta"] = np.asarray(data["theta"], float)
    return data


def _stop_rule(problem: OptimizationProblem):
    if problem.stop_delta is None and problem.stop_leakage is None:
        return None
    w = problem.weights

    def stop(theta, r):
        d = np.hypot(r[:16], r[16:32]) / w.delta if w.delta > 0 else np.inf
        ok = problem.stop_delta is None or np.linalg.norm(d) < problem.stop_delta
        if problem.stop_leakage is not None:
            ok = ok and objective_terms(theta, problem).l_c < problem.stop_leakage
        return bool(ok)

    return stop


def lma_minimize(problem: OptimizationProblem, seed: int = 0, theta0=None,
                 checkpoint: Optional[str] = None) -> OptimizationOutcome:
    """Single LMA run from a uniform random start (or ``theta0``).

    With ``checkpoint`` set and ``settings.checkpoint_every > 0`` the state is
    written periodically, and an existing checkpoint for the same seed is
    resumed.
    """
    theta = problem.random_theta(seed) if theta0 is None else np.asarray(theta0, float)
    start, mu0 = 0, None
    if checkpoint and Path(checkpoint).exists():
        state = load_checkpoint(checkpoint)
        if state.get("seed") == seed:
            theta, start, mu0 = state["theta"], state["iteration"], state["damping"]
    every = problem.settings.checkpoint_every

    def on_iteration(it, x, mu):
        if checkpoint and every and it % every == 0:
            save_checkpoint(checkpoint, x, it, mu, seed)

    result = levenberg_marquardt(lambda t: residuals(t, problem),
                                 lambda t: residuals_and_jacobian(t, problem),
                                 theta, problem.settings, _stop_rule(problem), mu0, start,
                                 on_iteration)
    if checkpoint and every:
        save_checkpoint(checkpoint, result.x, result.iterations, result.mu, seed)
    terms = objective_terms(result.x, problem)
    sr = SeedResult(seed, result.cost, terms.delta_norm, terms.l_c, result.iterations,
                    result.reason, result.x)
    program = problem.program(result.x)
    assert not validate(program, problem.model)
    return OptimizationOutcome(program, result.history, [sr], result.converged, seed)


def _run_seed(args):
    problem, seed = args
    return lma_minimize(problem, seed)


def multi_seed_search(problem: OptimizationProblem, n_seeds: int, workers: int = 1,
                      first_seed: int = 0, target_residual: Optional[float] = None
                      ) -> OptimizationOutcome:
    """Best of independent LMA runs from seeds ``first_seed .. first_seed + n_seeds - 1``.

    With ``target_residual`` the search stops at the first seed (in seed
    order) whose residual reaches it, so the answer does not depend on
    ``workers``.
    """
    if n_seeds < 1:
        raise ValueError("n_seeds must be at least 1")
    seeds = list(range(first_seed, first_seed + n_seeds))
    outcomes = []
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            for out in pool.map(_run_seed, [(problem, s) for s in seeds]):
                outcomes.append(out)
    else:
        for s in seeds:
            outcomes.append(lma_minimize(problem, s))
            if target_residual is not None and outcomes[-1].residual <= target_residual:
                break
    if target_residual is not None:
        for i, out in enumerate(outcomes):
            if out.residual <= target_residual:
                outcomes = outcomes[: i + 1]
                break
    best = min(outcomes, key=lambda o: (o.residual, o.best_seed))
    per_seed = [o.per_seed[0] for o in outcomes]
    return OptimizationOutcome(best.program, best.history, per_seed, best.converged, best.best_seed)
