"""Four-spin Hamiltonian of two exchange-coupled singlet-triplet qubits.

Everything is built directly in the six-dimensional ``m_s = 0`` subspace of
four spin-1/2 particles.  Energies are angular frequencies in rad/ns
(``hbar = 1``), detunings are in mV.

Basis order (spin up = +1 eigenvalue of sigma_z)::

    0  |ud ud>  = |00>
    1  |ud du>  = |01>
    2  |du ud>  = |10>
    3  |du du>  = |11>
    4  |dd uu>  leakage
    5  |uu dd>  leakage
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

HBAR = 0.6582  # ueV ns
CHANNELS = (12, 23, 34)
GRADIENTS = ("db12", "db23", "db34")
N_LEVELS = 6
N_COMP = 4

BASIS_SPINS = np.array([
    [+1, -1, +1, -1],
    [+1, -1, -1, +1],
    [-1, +1, +1, -1],
    [-1, +1, -1, +1],
    [-1, -1, +1, +1],
    [+1, +1, -1, -1],
])
BASIS_LABELS = ("udud", "uddu", "duud", "dudu", "dduu", "uudd")
COMPUTATIONAL = np.arange(4)
LEAKAGE = np.array([4, 5])

# sigma_z coefficient patterns multiplying each gradient
_GRADIENT_WEIGHTS = {
    "db12": np.array([-3, 1, 1, 1]) / 8,
    "db23": np.array([-1, -1, 1, 1]) / 4,
    "db34": np.array([-1, -1, -1, 3]) / 8,
}
_PAIRS = {12: (0, 1), 23: (1, 2), 34: (2, 3)}


def _exchange_pattern(i: int, j: int) -> np.ndarray:
    """(1/4) sigma_i . sigma_j restricted to the m_s=0 basis."""
    index = {tuple(s): k for k, s in enumerate(BASIS_SPINS)}
    out = np.zeros((N_LEVELS, N_LEVELS))
    for k, s in enumerate(BASIS_SPINS):
        out[k, k] += s[i] * s[j] / 4
        if s[i] != s[j]:
            flipped = s.copy()
            flipped[i], flipped[j] = s[j], s[i]
            out[index[tuple(flipped)], k] += 0.5
    return out


def _gradient_pattern(name: str) -> np.ndarray:
    return np.diag(BASIS_SPINS @ _GRADIENT_WEIGHTS[name])


EXCHANGE_PATTERNS = {c: _exchange_pattern(*_PAIRS[c]) for c in CHANNELS}
GRADIENT_PATTERNS = {g: _gradient_pattern(g) for g in GRADIENTS}

_singlet = np.array([1.0, -1.0]) / np.sqrt(2)
_ss = np.kron(_singlet, _singlet)
SS_PROJECTOR = np.zeros((N_LEVELS, N_LEVELS))
SS_PROJECTOR[:4, :4] = np.outer(_ss, _ss)

# stacked patterns: 3 exchanges, 3 gradients, capacitive projector
PATTERNS = np.stack(
    [EXCHANGE_PATTERNS[c] for c in CHANNELS]
    + [GRADIENT_PATTERNS[g] for g in GRADIENTS]
    + [SS_PROJECTOR]
)


@dataclass(frozen=True)
class DeviceModel:
    """Static device and control-hardware parameters.

    ``residual_j23`` replaces the exponential model on the middle exchange by
    a constant value (rad/ns) when set; the 23 detuning then has no effect.
    """

    j0: float = 1.0
    eps0: float = 0.272
    eps_min: float = -5.4 * 0.272
    eps_max: float = 2.4 * 0.272
    fs: float = 1.0
    ec: float = 0.0
    lever_arm: float = 40.0
    b_mean: float = 500 * 0.0388
    gradient_conversion: float = 0.0388
    residual_j23: Optional[float] = None

    def __post_init__(self):
        problems = self.violations()
        if problems:
            raise ValueError("invalid DeviceModel: " + "; ".join(problems))

    def violations(self) -> list[str]:
        out = []
        vals = [self.j0, self.eps0, self.eps_min, self.eps_max, self.fs, self.ec,
                self.lever_arm, self.b_mean, self.gradient_conversion]
        if not all(np.isfinite(vals)):
            out.append("non-finite parameter")
        if not self.j0 > 0:
            out.append("j0 must be positive")
        if not self.eps0 > 0:
            out.append("eps0 must be positive")
        if not self.eps_min < self.eps_max:
            out.append("eps_min must be below eps_max")
        if not self.fs > 0:
            out.append("fs must be positive")
        if not self.ec >= 0:
            out.append("ec must be non-negative")
        if not self.lever_arm > 0:
            out.append("lever_arm must be positive")
        if self.residual_j23 is not None and not self.residual_j23 >= 0:
            out.append("residual_j23 must be non-negative")
        return out

    def replace(self, **changes) -> "DeviceModel":
        return replace(self, **changes)

    @property
    def ec_rate(self) -> float:
        """Capacitive prefactor per unit sensitivity product, in rad/ns."""
        return self.ec / HBAR

    def sensitivity(self, j):
        """Dimensionless charge admixture hbar*J/(lever_arm*eps0)."""
        return HBAR * np.asarray(j) / (self.lever_arm * self.eps0)


@dataclass(frozen=True)
class MagneticGradients:
    db12: float = 1.0
    db23: float = 7.0
    db34: float = -1.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError("magnetic gradients must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.db12, self.db23, self.db34], dtype=float)

    def scaled(self, factor: float) -> "MagneticGradients":
        return MagneticGradients(*(factor * self.as_array()))

    def shifted(self, offsets) -> "MagneticGradients":
        return MagneticGradients(*(self.as_array() + np.asarray(offsets, float)))


@dataclass(frozen=True)
class GateTarget:
    name: str
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (4, 4):
            raise ValueError("target must be 4x4")
        if np.linalg.norm(m.conj().T @ m - np.eye(4)) > 1e-12:
            raise ValueError("target is not unitary")
        object.__setattr__(self, "matrix", m)


def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite input")


def exchange_from_detuning(eps, model: DeviceModel):
    """Exchange rate J = j0 * exp(eps / eps0) in rad/ns."""
    _check_finite(eps)
    return model.j0 * np.exp(np.asarray(eps, dtype=float) / model.eps0)


def detuning_from_exchange(j, model: DeviceModel):
    """Inverse of :func:`exchange_from_detuning`."""
    j = np.asarray(j, dtype=float)
    if np.any(j <= 0):
        raise ValueError("exchange must be positive")
    return model.eps0 * np.log(j / model.j0)


def heisenberg_ms0(j12, j23, j34, grads: MagneticGradients, b_mean: float = 0.0) -> np.ndarray:
    """Heisenberg plus Zeeman Hamiltonian on the m_s=0 subspace.

    The homogeneous field ``b_mean`` is accepted for completeness; the total
    sigma_z vanishes on every basis state so it never contributes.
    """
    _check_finite(j12, j23, j34, grads.as_array(), b_mean)
    h = (j12 * EXCHANGE_PATTERNS[12] + j23 * EXCHANGE_PATTERNS[23]
         + j34 * EXCHANGE_PATTERNS[34])
    for name, value in zip(GRADIENTS, grads.as_array()):
        h = h + value * GRADIENT_PATTERNS[name]
    h = h + 0.5 * b_mean * np.diag(BASIS_SPINS.sum(axis=1))
    return h


def capacitive_prefactor(j12, j34, model: DeviceModel):
    """Coefficient of |SS><SS| in rad/ns."""
    return model.ec_rate * model.sensitivity(j12) * model.sensitivity(j34)


def capacitive_ms0(j12, j34, model: DeviceModel) -> np.ndarray:
    if model.ec < 0:
        raise ValueError("ec must be non-negative")
    return capacitive_prefactor(j12, j34, model) * SS_PROJECTOR


def exchanges(eps12, eps23, eps34, model: DeviceModel):
    """Exchange rates of the three channels, honouring ``residual_j23``."""
    j12 = exchange_from_detuning(eps12, model)
    j34 = exchange_from_detuning(eps34, model)
    if model.residual_j23 is None:
        j23 = exchange_from_detuning(eps23, model)
    else:
        _check_finite(eps23)
        j23 = np.full_like(np.asarray(eps23, dtype=float), model.residual_j23)
    return j12, j23, j34


def hamiltonian_total(eps12, eps23, eps34, grads: MagneticGradients, model: DeviceModel) -> np.ndarray:
    j12, j23, j34 = exchanges(eps12, eps23, eps34, model)
    return (heisenberg_ms0(j12, j23, j34, grads, model.b_mean)
            + capacitive_ms0(j12, j34, model))


def detuning_sensitivity(eps12, eps23, eps34, grads: MagneticGradients, model: DeviceModel,
                         channel: int) -> np.ndarray:
    """Exact derivative of :func:`hamiltonian_total` with respect to one detuning."""
    if channel not in CHANNELS:
        raise ValueError(f"unknown channel {channel!r}; expected one of {CHANNELS}")
    j12, j23, j34 = exchanges(eps12, eps23, eps34, model)
    if channel == 23:
        if model.residual_j23 is not None:
            return np.zeros((N_LEVELS, N_LEVELS))
        return j23 / model.eps0 * EXCHANGE_PATTERNS[23]
    j = j12 if channel == 12 else j34
    return (j * EXCHANGE_PATTERNS[channel] + capacitive_ms0(j12, j34, model)) / model.eps0


# ---------------------------------------------------------------------------
# batched construction used by the propagators


def coefficients(eps: np.ndarray, grads, model: DeviceModel) -> np.ndarray:
    """Pattern coefficients for a batch of detuning triples.

    ``eps`` has shape (3, M); ``grads`` is a :class:`MagneticGradients` or an
    array broadcastable to (3, M).  Returns (M, 7) coefficients matching
    :data:`PATTERNS`.
    """
    eps = np.asarray(eps, dtype=float)
    j12, j23, j34 = exchanges(eps[0], eps[1], eps[2], model)
    g = grads.as_array() if isinstance(grads, MagneticGradients) else np.asarray(grads, float)
    g = np.broadcast_to(g.reshape(3, -1) if g.ndim == 1 else g, (3, eps.shape[1]))
    cap = capacitive_prefactor(j12, j34, model)
    return np.stack([j12, j23, j34, g[0], g[1], g[2], cap], axis=-1)


def batch_hamiltonians(coef: np.ndarray) -> np.ndarray:
    return np.einsum("...k,kij->...ij", coef, PATTERNS)


def batch_sensitivities(coef: np.ndarray, model: DeviceModel) -> np.ndarray:
    """d H / d eps_c for each step, shape (..., 3, 6, 6)."""
    j12, j23, j34, cap = coef[..., 0], coef[..., 1], coef[..., 2], coef[..., 6]
    zero = np.zeros_like(cap)
    if model.residual_j23 is not None:
        j23 = zero
    # rows: channel, columns: (exchange12, exchange23, exchange34, ss)
    w = np.stack([
        np.stack([j12, zero, zero, cap], axis=-1),
        np.stack([zero, j23, zero, zero], axis=-1),
        np.stack([zero, zero, j34, cap], axis=-1),
    ], axis=-2) / model.eps0
    basis = PATTERNS[[0, 1, 2, 6]]
    return np.einsum("...ck,kij->...cij", w, basis)


def batch_sensitivity_derivatives(coef: np.ndarray, model: DeviceModel) -> np.ndarray:
    """d A_c / d eps_c' for each step, shape (..., 3, 3, 6, 6) indexed [c, c']."""
    a = batch_sensitivities(coef, model)
    out = np.zeros(a.shape[:-3] + (3, 3, N_LEVELS, N_LEVELS))
    for c in range(3):
        out[..., c, c, :, :] = a[..., c, :, :] / model.eps0
    cross = coef[..., 6, None, None] * SS_PROJECTOR / model.eps0 ** 2
    out[..., 0, 2, :, :] = cross
    out[..., 2, 0, :, :] = cross
    return out


# ---------------------------------------------------------------------------
# target gates

_X90 = np.array([[1, -1j], [-1j, 1]]) / np.sqrt(2)
_Y90 = np.array([[1, -1], [1, 1]]) / np.sqrt(2)
_I2 = np.eye(2)

_GATES = {
    "CNOT": np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex),
    "X90⊗I": np.kron(_X90, _I2),
    "Y90⊗I": np.kron(_Y90, _I2),
    "I⊗X90": np.kron(_I2, _X90),
    "I⊗Y90": np.kron(_I2, _Y90),
    "IDENTITY": np.eye(4, dtype=complex),
}
_ALIASES = {
    "cnot": "CNOT", "x90": "X90⊗I", "y90": "Y90⊗I", "identity": "IDENTITY",
    "x90i": "X90⊗I", "y90i": "Y90⊗I", "ix90": "I⊗X90", "iy90": "I⊗Y90",
    "x90*i": "X90⊗I", "y90*i": "Y90⊗I", "i*x90": "I⊗X90", "i*y90": "I⊗Y90",
}


def target_gate_matrix(name: str) -> GateTarget:
    key = name if name in _GATES else _ALIASES.get(name.strip().lower())
    if key is None:
        raise ValueError(f"unknown gate {name!r}")
    return GateTarget(key, _GATES[key].copy())
