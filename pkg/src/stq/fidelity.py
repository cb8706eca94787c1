"""Average gate fidelity, infidelity decomposition and leakage bookkeeping."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import spin_model as sm
from .noise import NoiseModel, monte_carlo_evaluate
from .propagator import evolve
from .pulses import ImpulseResponse, PulseProgram, default_impulse_response, render


def _fidelity_terms(u_ref: np.ndarray, ops: np.ndarray) -> np.ndarray:
    d = u_ref.shape[0]
    m = u_ref.conj().T @ ops
    tr = np.trace(m, axis1=-2, axis2=-1)
    norm = np.real(np.einsum("...ij,...ij->...", ops.conj(), ops))
    return (np.abs(tr) ** 2 + norm) / (d * (d + 1))


def average_gate_fidelity(u_ref, ops, weights=None) -> float:
    """Haar-averaged fidelity of the channel sum_k w_k V_k . V_k^dagger against ``u_ref``.

    Valid for trace-decreasing ensembles; leakage lowers the result through
    the tr(V^dagger V) term.
    """
    u_ref = np.asarray(u_ref)
    ops = np.asarray(ops)
    if ops.ndim == 2:
        ops = ops[None]
    if ops.shape[0] == 0:
        raise ValueError("empty ensemble")
    w = np.full(len(ops), 1 / len(ops)) if weights is None else np.asarray(weights, float)
    if abs(w.sum() - 1) > 1e-9:
        raise ValueError("weights must sum to one")
    return float(np.dot(w, _fidelity_terms(u_ref, ops)))


def fidelity_samples(u_ref, ops) -> np.ndarray:
    """Per-member fidelities, for Monte Carlo error estimates."""
    return _fidelity_terms(np.asarray(u_ref), np.asarray(ops))


def choi_matrix(process: np.ndarray) -> np.ndarray:
    """Normalised Choi matrix sum_ij Q(|i><j|) x |i><j| / d of a row-major superoperator."""
    d = int(round(np.sqrt(process.shape[0])))
    q = process.reshape(d, d, d, d)  # [k, l, i, j] = Q(|i><j|)_kl
    return np.transpose(q, (0, 2, 1, 3)).reshape(d * d, d * d) / d


def fidelity_from_superoperator(u_ref, process: np.ndarray, cp_tol: float = 1e-6) -> float:
    u_ref = np.asarray(u_ref)
    d = u_ref.shape[0]
    choi = choi_matrix(process)
    herm = 0.5 * (choi + choi.conj().T)
    if np.linalg.eigvalsh(herm).min() < -cp_tol:
        raise ValueError("process is not completely positive")
    phi = u_ref.reshape(-1) / np.sqrt(d)  # (u x 1)|Phi>, ordered [k, i]
    overlap = np.real(phi.conj() @ choi @ phi)
    return float((d * d * overlap + d * np.real(np.trace(choi))) / (d * (d + 1)))


# ---------------------------------------------------------------------------
# reports

REPORT_FIELDS = ("i_s", "i_f", "i_b", "i_total", "l_c", "l_i", "l_total", "f_total",
                 "delta_norm", "mc_rel_error", "metadata")
CSV_COLUMNS = ("i_s", "i_f", "i_b", "i_total", "l_i", "l_c", "l_total", "f_total")


@dataclass
class EvaluationReport:
    """Infidelity and leakage budget of one pulse.

    Per-source infidelities are the fidelity lost relative to the noiseless
    truncated propagator, with the noiseless closest unitary as reference.
    ``f_total`` is measured against the target gate and so also contains the
    systematic error.
    """

    i_s: float
    i_f: float
    i_b: float
    i_total: float
    l_c: float
    l_i: float
    l_total: float
    f_total: float
    delta_norm: float
    mc_rel_error: float
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EvaluationReport":
        missing = [f.name for f in fields(cls) if f.name not in data]
        if missing:
            raise ValueError(f"report is missing fields {missing}")
        return cls(**{f.name: data[f.name] for f in fields(cls)})


def parameter_digest(*parts) -> str:
    """Stable SHA-256 digest of JSON-able parameter descriptions."""
    blob = json.dumps(parts, sort_keys=True, default=_jsonable).encode()
    return hashlib.sha256(blob).hexdigest()


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj)}")


def infidelity_report(program: PulseProgram, grads: sm.MagneticGradients, model: sm.DeviceModel,
                      noise: NoiseModel, target: sm.GateTarget, n_real: int = 1000, seed: int = 0,
                      kernel: Optional[ImpulseResponse] = None, workers: int = 1) -> EvaluationReport:
    """Monte Carlo infidelity budget with separate and simultaneous noise sources."""
    kernel = kernel or default_impulse_response(program.fs)
    nominal = evolve(render(program, kernel), grads, model, target)
    if nominal.degenerate:
        raise ValueError("noiseless truncated propagator is singular")
    u_c = nominal.u_c
    f0 = average_gate_fidelity(u_c, nominal.v_c)

    active = {
        "qs_eps": any(noise.sigma_eps),
        "qs_db": any(noise.sigma_db),
        "fast": noise.s0 > 0,
    }

    def run(sources):
        sources = tuple(s for s in sources if active[s])
        if not sources:
            return None
        return monte_carlo_evaluate(program, grads, model, noise, sources, n_real, seed,
                                    kernel, workers)

    def excess(ens):
        return 0.0 if ens is None else f0 - average_gate_fidelity(u_c, ens.v_c)

    ens_s, ens_b, ens_f = run(["qs_eps"]), run(["qs_db"]), run(["fast"])
    ens_all = run(["qs_eps", "qs_db", "fast"])
    i_total = excess(ens_all)
    if ens_all is None:
        l_total, f_total, rel = nominal.l_c, average_gate_fidelity(target.matrix, nominal.v_c), 0.0
    else:
        l_total = float(ens_all.l_c.mean())
        f_total = average_gate_fidelity(target.matrix, ens_all.v_c)
        samples = fidelity_samples(u_c, ens_all.v_c)
        se = samples.std(ddof=1) / np.sqrt(len(samples)) if len(samples) > 1 else 0.0
        rel = float(se / i_total) if i_total > 0 else float("inf")
    meta = {
        "alpha": noise.alpha,
        "n_real": n_real,
        "seed": seed,
        "target": target.name,
        "digest": parameter_digest(program.samples, program.fs, grads, model, noise, target.name,
                                   kernel.kernel, kernel.dt_fine),
    }
    return EvaluationReport(
        i_s=excess(ens_s), i_f=excess(ens_f), i_b=excess(ens_b), i_total=i_total,
        l_c=nominal.l_c, l_i=l_total - nominal.l_c, l_total=l_total, f_total=f_total,
        delta_norm=nominal.delta_norm, mc_rel_error=rel, metadata=meta,
    )
