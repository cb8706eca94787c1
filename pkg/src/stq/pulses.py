"""AWG-constrained piecewise-constant pulses and their band-limited rendering."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .spin_model import CHANNELS, DeviceModel, MagneticGradients

TAIL_SAMPLES = 4
DEFAULT_OVERSAMPLING = 20
RISE_TIME_AT_1GSPS = 1.0  # ns, 10-90 %


@dataclass
class PulseProgram:
    """Detuning samples for the channels (12, 23, 34), shape (3, n), in mV."""

    samples: np.ndarray
    fs: float
    frozen: Optional[np.ndarray] = None

    def __post_init__(self):
        self.samples = np.array(self.samples, dtype=float)
        if self.samples.ndim != 2 or self.samples.shape[0] != 3:
            raise ValueError("samples must have shape (3, n)")
        if self.frozen is None:
            self.frozen = np.zeros(self.samples.shape, dtype=bool)
            self.frozen[:, -TAIL_SAMPLES:] = True
        self.frozen = np.array(self.frozen, dtype=bool)
        if self.frozen.shape != self.samples.shape:
            raise ValueError("frozen mask shape mismatch")

    @property
    def n(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n / self.fs

    @property
    def free(self) -> np.ndarray:
        return ~self.frozen

    def copy(self) -> "PulseProgram":
        return PulseProgram(self.samples.copy(), self.fs, self.frozen.copy())

    def with_free_values(self, values) -> "PulseProgram":
        out = self.copy()
        out.samples[out.free] = values
        return out

    @classmethod
    def idle(cls, n: int, model: DeviceModel, frozen_channels=()) -> "PulseProgram":
        """All samples at eps_min; tail and ``frozen_channels`` frozen."""
        prog = cls(np.full((3, n), model.eps_min), model.fs)
        for c in frozen_channels:
            prog.frozen[CHANNELS.index(c)] = True
        return prog


@dataclass(frozen=True)
class Violation:
    kind: str
    channel: int
    index: int
    message: str


def validate(program: PulseProgram, model: DeviceModel) -> list[Violation]:
    """All bound, tail and shape violations; empty list means valid."""
    out = []
    s = program.samples
    if program.n < TAIL_SAMPLES + 1:
        out.append(Violation("shape", 0, -1, f"need more than {TAIL_SAMPLES} samples"))
    if not np.isclose(program.fs, model.fs, rtol=1e-12):
        out.append(Violation("shape", 0, -1, f"sample rate {program.fs} != model {model.fs}"))
    if not np.all(np.isfinite(s)):
        out.append(Violation("shape", 0, -1, "non-finite samples"))
    for ci, c in enumerate(CHANNELS):
        for k in np.flatnonzero((s[ci] < model.eps_min) | (s[ci] > model.eps_max)):
            out.append(Violation("bound", c, int(k),
                                 f"eps{c}[{k}] = {s[ci, k]:.6g} mV outside "
                                 f"[{model.eps_min:.6g}, {model.eps_max:.6g}]"))
        tail = range(max(program.n - TAIL_SAMPLES, 0), program.n)
        for k in tail:
            if s[ci, k] != model.eps_min:
                out.append(Violation("tail", c, k, f"eps{c}[{k}] must equal eps_min"))
            if not program.frozen[ci, k]:
                out.append(Violation("tail", c, k, f"eps{c}[{k}] must be frozen"))
    return out


# ---------------------------------------------------------------------------
# impulse response


@dataclass(frozen=True)
class ImpulseResponse:
    """Causal kernel on the fine grid (1/ns) with unit DC gain."""

    kernel: np.ndarray = field(repr=False)
    dt_fine: float

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=float)
        if k.ndim != 1 or k.size == 0 or not np.all(np.isfinite(k)):
            raise ValueError("kernel must be a finite 1-d array")
        if not self.dt_fine > 0:
            raise ValueError("dt_fine must be positive")
        object.__setattr__(self, "kernel", k)

    @property
    def weights(self) -> np.ndarray:
        return self.kernel * self.dt_fine

    @property
    def support(self) -> float:
        return self.kernel.size * self.dt_fine


def _damped_step(x):
    return 1 - (1 + x) * np.exp(-x)


@lru_cache(maxsize=None)
def _rise_in_tau() -> float:
    lo = brentq(lambda x: _damped_step(x) - 0.1, 0, 10)
    hi = brentq(lambda x: _damped_step(x) - 0.9, 0, 20)
    return hi - lo


def default_impulse_response(fs: float, dt_fine: Optional[float] = None,
                             tail_tol: float = 1e-10) -> ImpulseResponse:
    """Critically damped second-order low-pass with 1 ns rise time at 1 GS/s.

    Kernel values are exact averages of the continuous response against the
    fine-grid hat function, so the rendered trace equals the step-averaged
    continuous trace.  The kernel is cut where the remaining step response is
    below ``tail_tol`` and renormalised.
    """
    if not fs > 0:
        raise ValueError("fs must be positive")
    if dt_fine is None:
        dt_fine = 1 / (DEFAULT_OVERSAMPLING * fs)
    if not 0 < dt_fine <= 1 / (10 * fs) * (1 + 1e-12):
        raise ValueError("dt_fine must satisfy 0 < dt_fine <= 1/(10 fs)")
    tau = RISE_TIME_AT_1GSPS / fs / _rise_in_tau()
    x_end = brentq(lambda x: (1 + x) * np.exp(-x) - tail_tol, 1, 200)
    n = int(np.ceil(x_end * tau / dt_fine)) + 1

    def ramp(t):
        # twice-integrated impulse response, zero for t <= 0
        t = np.maximum(t, 0.0)
        return t - 2 * tau + (t + 2 * tau) * np.exp(-t / tau)

    t = np.arange(n) * dt_fine
    w = (ramp(t + dt_fine) - 2 * ramp(t) + ramp(t - dt_fine)) / dt_fine
    w /= w.sum()
    return ImpulseResponse(w / dt_fine, dt_fine)


def delta_impulse_response(dt_fine: float) -> ImpulseResponse:
    return ImpulseResponse(np.array([1 / dt_fine]), dt_fine)


def step_response(kernel: ImpulseResponse) -> tuple[np.ndarray, np.ndarray]:
    """Times at the end of each fine step and the rendered unit step."""
    y = np.cumsum(kernel.weights)
    return (np.arange(y.size) + 1) * kernel.dt_fine, y


def rise_time(kernel: ImpulseResponse) -> float:
    """10-90 % rise time of the step response by linear interpolation."""
    t, y = step_response(kernel)
    t = np.concatenate([[0.0], t])
    y = np.concatenate([[0.0], y])
    return float(np.interp(0.9, y, t) - np.interp(0.1, y, t))


def load_impulse_response(path, dt_fine: float) -> ImpulseResponse:
    """Read a ``t_ns,amplitude`` CSV and resample it onto the fine grid."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t, a = data[:, 0], data[:, 1]
    if np.any(np.diff(t) <= 0):
        raise ValueError("impulse response times must increase")
    grid = np.arange(0.0, t[-1] + dt_fine / 2, dt_fine)
    k = np.interp(grid, t, a, left=0.0, right=0.0)
    total = k.sum() * dt_fine
    if not total > 0:
        raise ValueError("impulse response has no DC gain")
    return ImpulseResponse(k / total, dt_fine)


def save_impulse_response(path, kernel: ImpulseResponse) -> None:
    t = np.arange(kernel.kernel.size) * kernel.dt_fine
    with open(path, "w", newline="") as fh:
        fh.write("t_ns,amplitude\n")
        for ti, ai in zip(t, kernel.kernel):
            fh.write(f"{float(ti)!r},{float(ai)!r}\n")


# ---------------------------------------------------------------------------
# rendering


@dataclass
class RenderedTraces:
    eps: np.ndarray  # (3, M) mV, value on each fine step
    dt_fine: float

    @property
    def n_steps(self) -> int:
        return self.eps.shape[1]

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt_fine

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps) * self.dt_fine


def oversampling(fs: float, dt_fine: float) -> int:
    sub = 1 / (fs * dt_fine)
    k = int(round(sub))
    if k < 1 or abs(sub - k) > 1e-9 * k:
        raise ValueError(f"fine step {dt_fine} ns does not divide the sample period {1 / fs} ns")
    return k


def render_samples(samples: np.ndarray, fs: float, kernel: ImpulseResponse) -> np.ndarray:
    """Linear rendering map applied to raw (3, n) or (n,) samples.

    Before the first and after the last sample the AWG holds the final sample
    value, so the map is linear and constant programs render to constants.
    """
    samples = np.asarray(samples, dtype=float)
    sub = oversampling(fs, kernel.dt_fine)
    w = kernel.weights
    pad = w.size - 1
    zoh = np.repeat(samples, sub, axis=-1)
    last = samples[..., -1:]
    ext = np.concatenate([np.repeat(last, pad, axis=-1), zoh, np.repeat(last, pad, axis=-1)], axis=-1)
    if ext.ndim == 1:
        return np.convolve(ext, w, mode="valid")
    return np.stack([np.convolve(row, w, mode="valid") for row in ext])


def render(program: PulseProgram, kernel: ImpulseResponse) -> RenderedTraces:
    return RenderedTraces(render_samples(program.samples, program.fs, kernel), kernel.dt_fine)


def render_matrix(n: int, fs: float, kernel: ImpulseResponse) -> np.ndarray:
    """Jacobian of a rendered channel with respect to its samples, shape (M, n)."""
    return _render_matrix(n, float(fs), kernel.dt_fine, kernel.kernel.tobytes())


@lru_cache(maxsize=32)
def _render_matrix(n, fs, dt_fine, kernel_bytes):
    kernel = ImpulseResponse(np.frombuffer(kernel_bytes), dt_fine)
    return render_samples(np.eye(n), fs, kernel).T.copy()


def rescale_samplerate(program: PulseProgram, model: DeviceModel, grads: MagneticGradients,
                       fs_new: float):
    """Same dimensionless pulse at a new sample rate.

    All energies scale with ``fs_new / fs``.  The capacitive energy is divided
    by the factor because the sensitivities already scale with J.
    """
    if not fs_new > 0:
        raise ValueError("fs_new must be positive")
    r = fs_new / program.fs
    new_prog = PulseProgram(program.samples.copy(), fs_new, program.frozen.copy())
    new_model = model.replace(
        fs=model.fs * r, j0=model.j0 * r, b_mean=model.b_mean * r, ec=model.ec / r,
        residual_j23=None if model.residual_j23 is None else model.residual_j23 * r,
    )
    return new_prog, new_model, grads.scaled(r)


# ---------------------------------------------------------------------------
# CSV I/O


def save_pulse_csv(path, program: PulseProgram, meta: Optional[dict] = None) -> None:
    """Write samples as ``channel,k,eps_mV`` rows, k counted from 1.

    ``meta`` entries are written first as ``# key: value`` comment lines.
    """
    with open(path, "w", newline="") as fh:
        for key, value in (meta or {}).items():
            fh.write(f"# {key}: {value}\n")
        fh.write("channel,k,eps_mV\n")
        for ci, c in enumerate(CHANNELS):
            for k in range(program.n):
                fh.write(f"{c},{k + 1},{float(program.samples[ci, k])!r}\n")


def load_pulse_csv(path, fs: float, frozen_channels=()) -> PulseProgram:
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        if reader.fieldnames != ["channel", "k", "eps_mV"]:
            raise ValueError(f"{path}: expected header channel,k,eps_mV")
        for row in reader:
            rows[(int(row["channel"]), int(row["k"]))] = float(row["eps_mV"])
    n = max(k for _, k in rows)
    samples = np.empty((3, n))
    for ci, c in enumerate(CHANNELS):
        for k in range(1, n + 1):
            try:
                samples[ci, k - 1] = rows[(c, k)]
            except KeyError:
                raise ValueError(f"{path}: missing sample channel={c} k={k}") from None
    prog = PulseProgram(samples, fs)
    for c in frozen_channels:
        prog.frozen[CHANNELS.index(c)] = True
    return prog
