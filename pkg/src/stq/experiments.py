"""Presets, layered run configuration and the synthesis, evaluation and sweep drivers."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from importlib import resources
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import spin_model as sm
from .fidelity import (CSV_COLUMNS, EvaluationReport, average_gate_fidelity, infidelity_report,
                       parameter_digest)
from .noise import NoiseModel
from .optimize import (LMSettings, OptimizationOutcome, OptimizationProblem, Weights,
                       lma_minimize, multi_seed_search)
from .propagator import evolve
from .pulses import (ImpulseResponse, PulseProgram, default_impulse_response,
                     load_impulse_response, load_pulse_csv, render, rescale_samplerate,
                     save_pulse_csv, validate)

SWEEP_AXES = ("samplerate", "sigma_db", "sigma_eps", "s0", "j23_residual")
POINTS_PER_DECADE = 7
SWEEP_COLUMNS = ("value", "i_s", "i_f", "i_b", "i_total", "i_sys", "l_c", "l_total", "f_total")

PRESETS = {
    "gaas": {
        "model": {"j0": 1.0, "eps0": 0.272, "eps_min": -5.4 * 0.272, "eps_max": 2.4 * 0.272,
                  "fs": 1.0, "b_mean": 500 * 0.0388},
        "noise": {"sigma_eps": (0.008, 0.008, 0.008), "sigma_db": 0.3 * 0.0388},
        "gradients": {"db12": 1.0, "db23": 7.0, "db34": -1.0},
    },
    "si": {
        "model": {"j0": 0.1, "eps0": 0.272, "eps_min": -5.4 * 0.272, "eps_max": 2.4 * 0.272,
                  "fs": 0.1, "b_mean": 500 * 0.0388},
        "noise": {"sigma_eps": (0.008, 0.008, 0.008), "sigma_db": 0.0},
        "gradients": {"db12": 0.1, "db23": 0.7, "db34": -0.1},
    },
}


STORED_PULSES = ("cnot_gaas", "cnot_si", "x90_uncompensated", "x90_compensated")


class ConfigError(ValueError):
    """Raised for configurations that fail validation."""


def resolve_preset(name: str):
    """DeviceModel, NoiseModel and MagneticGradients of a named parameter set."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    p = PRESETS[name]
    return sm.DeviceModel(**p["model"]), NoiseModel(**p["noise"]), sm.MagneticGradients(**p["gradients"])


@dataclass
class ExperimentConfig:
    """Run description, stored as JSON.

    ``model``, ``noise`` and ``gradients`` hold field overrides on top of the
    preset.  ``sweep`` takes ``axis`` plus either ``values`` or ``start``,
    ``stop`` and optionally ``points_per_decade``.
    """

    preset: str = "gaas"
    model: dict = field(default_factory=dict)
    noise: dict = field(default_factory=dict)
    gradients: dict = field(default_factory=dict)
    gate: str = "cnot"
    n: int = 50
    alphas: list = field(default_factory=lambda: [0.0, 0.7])
    n_real: int = 1000
    seed: int = 0
    n_seeds: int = 20
    workers: int = 1
    max_iter: int = 10_000
    frozen_channels: list = field(default_factory=list)
    weights: dict = field(default_factory=dict)
    stop_delta: Optional[float] = 1e-4
    stop_leakage: Optional[float] = 1e-5
    seed_high: Optional[float] = None
    refine_iter: int = 0
    refine_alpha: float = 0.0
    pulse: Optional[str] = None
    impulse_response: Optional[str] = None
    sweep: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def merged(self, **overrides) -> "ExperimentConfig":
        data = self.to_dict()
        data.update({k: v for k, v in overrides.items() if v is not None})
        return ExperimentConfig.from_dict(data)

    def digest(self) -> str:
        """Short hash of the configuration; input files count by content, not path."""
        data = self.to_dict()
        for key in ("pulse", "impulse_response"):
            if data[key] and Path(data[key]).is_file():
                data[key] = hashlib.sha256(Path(data[key]).read_bytes()).hexdigest()
        return parameter_digest(data)[:16]

    def resolve(self):
        """Validated (model, noise, grads, target)."""
        model, noise, grads = resolve_preset("gaas" if self.preset == "custom" else self.preset)
        try:
            model = model.replace(**self.model)
            noise = noise.replace(**{k: tuple(v) if isinstance(v, list) else v
                                     for k, v in self.noise.items()})
            grads = sm.MagneticGradients(**{**asdict(grads), **self.gradients})
            target = sm.target_gate_matrix(self.gate)
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from None
        problems = []
        if self.n < 1:
            problems.append("n must be at least 1")
        if self.n_seeds < 1:
            problems.append("n_seeds must be at least 1")
        if self.n_real < 2:
            problems.append("n_real must be at least 2")
        if self.workers < 1:
            problems.append("workers must be at least 1")
        for c in self.frozen_channels:
            if c not in sm.CHANNELS:
                problems.append(f"unknown channel {c}")
        if problems:
            raise ConfigError("; ".join(problems))
        return model, noise, grads, target

    def kernel(self, fs: float) -> ImpulseResponse:
        base = default_impulse_response(fs)
        if self.impulse_response:
            return load_impulse_response(self.impulse_response, base.dt_fine)
        return base

    def weight_set(self) -> Weights:
        try:
            return Weights(**self.weights)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def problem(self) -> OptimizationProblem:
        """Search-stage problem; noiseless when a refinement stage follows."""
        model, noise, grads, target = self.resolve()
        weights = self.weight_set()
        if self.refine_iter > 0:
            weights = Weights.noiseless()
        return OptimizationProblem.build(
            target, model, grads, noise, self.n, frozen_channels=tuple(self.frozen_channels),
            weights=weights, settings=LMSettings(max_iter=self.max_iter),
            kernel=self.kernel(model.fs), stop_delta=self.stop_delta,
            stop_leakage=self.stop_leakage, seed_high=self.seed_high,
        )


def stored_pulse(name: str):
    """Shipped pulse and the configuration it was synthesised for.

    Returns ``(program, config)``; ``config.pulse`` points at the CSV file.
    """
    if name not in STORED_PULSES:
        raise ConfigError(f"unknown stored pulse {name!r}; choose from {STORED_PULSES}")
    root = resources.files("stq") / "data"
    config = ExperimentConfig.load(root / f"{name}.json")
    config.pulse = str(root / f"{name}.csv")
    return load_config_pulse(config), config


# ---------------------------------------------------------------------------
# serialisation


def _fmt(x) -> str:
    return repr(float(x))


def export_report(report: Optional[EvaluationReport], fmt: str = "json", path=None) -> str:
    """Serialise a report to JSON or a one-row CSV; optionally write it to ``path``."""
    if report is None or (isinstance(report, dict) and not report):
        raise ValueError("empty report")
    if isinstance(report, dict):
        report = EvaluationReport.from_dict(report)
    if fmt == "json":
        text = json.dumps(report.to_dict(), indent=2, sort_keys=False) + "\n"
    elif fmt == "csv":
        text = ",".join(CSV_COLUMNS) + "\n" + ",".join(_fmt(getattr(report, c)) for c in CSV_COLUMNS) + "\n"
    else:
        raise ValueError(f"unknown format {fmt!r}; use json or csv")
    if path is not None:
        Path(path).write_text(text)
    return text


def load_report(path) -> EvaluationReport:
    return EvaluationReport.from_dict(json.loads(Path(path).read_text()))


def _write_csv(path, columns, rows, meta: dict):
    buf = io.StringIO()
    for key, value in meta.items():
        buf.write(f"# {key}: {value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) if isinstance(row[c], float) else row[c] for c in columns])
    Path(path).write_text(buf.getvalue())


def _write_timing(out: Path, name: str, started: float, **extra):
    """Wall-clock information lives in a sidecar so data files stay reproducible."""
    info = {"command": name, "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
            "wall_seconds": round(time.time() - started, 3), **extra}
    (out / f"{name}.timing.json").write_text(json.dumps(info, indent=2) + "\n")


# ---------------------------------------------------------------------------
# drivers


def evaluate_program(program: PulseProgram, config: ExperimentConfig, alphas=None):
    """Monte Carlo reports of one pulse for every requested noise exponent."""
    model, noise, grads, target = config.resolve()
    kernel = config.kernel(program.fs)
    reports = {}
    for a in (config.alphas if alphas is None else alphas):
        rep = infidelity_report(program, grads, model, noise.replace(alpha=float(a)), target,
                                n_real=config.n_real, seed=config.seed, kernel=kernel,
                                workers=config.workers)
        rep.metadata.update(config_digest=config.digest())
        reports[float(a)] = rep
    return reports


def synthesize(config: ExperimentConfig) -> OptimizationOutcome:
    """Multi-seed search followed by an optional noise-aware polish of the best seed.

    With ``refine_iter > 0`` the search only targets the gate and leakage, and
    the configured weights apply to the polish.
    """
    problem = config.problem()
    outcome = multi_seed_search(problem, config.n_seeds, workers=config.workers,
                                first_seed=config.seed)
    if config.refine_iter > 0:
        model, noise, grads, target = config.resolve()
        refine = OptimizationProblem(
            target, model, grads, noise.replace(alpha=config.refine_alpha), problem.template,
            weights=config.weight_set(), settings=LMSettings(max_iter=config.refine_iter),
            kernel=problem.kernel,
        )
        best = next(s for s in outcome.per_seed if s.seed == outcome.best_seed)
        polished = lma_minimize(refine, best.seed, theta0=best.theta)
        outcome = OptimizationOutcome(polished.program, outcome.history + polished.history,
                                      outcome.per_seed, outcome.converged and polished.converged,
                                      outcome.best_seed)
    return outcome


def _report_name(alpha: float) -> str:
    return f"report_alpha{alpha:g}.json"


def run_optimize(config: ExperimentConfig, out_dir) -> int:
    """Synthesise a pulse and write pulse CSV, per-seed CSV and one report per alpha.

    Returns the exit code: 0 converged, 2 best effort, 1 invalid input or I/O error.
    """
    started = time.time()
    out = Path(out_dir)
    try:
        config.resolve()
        out.mkdir(parents=True, exist_ok=True)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}")
        return 1
    outcome = synthesize(config)
    meta = {"config_digest": config.digest(), "seed": config.seed}
    try:
        save_pulse_csv(out / "pulse.csv", outcome.program, meta)
        _write_csv(out / "seeds.csv", ("seed", "residual", "delta_norm", "l_c", "iterations", "reason"),
                   [s.row() for s in outcome.per_seed], meta)
        reports = evaluate_program(outcome.program, config)
        for a, rep in reports.items():
            export_report(rep, "json", out / _report_name(a))
        (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n")
        _write_timing(out, "optimize", started, best_seed=outcome.best_seed)
    except OSError as exc:
        print(f"error: {exc}")
        return 1
    return 0 if outcome.converged else 2


def load_config_pulse(config: ExperimentConfig) -> PulseProgram:
    if not config.pulse:
        raise ConfigError("no pulse file given")
    model = config.resolve()[0]
    return load_pulse_csv(config.pulse, model.fs, tuple(config.frozen_channels))


def run_evaluate(config: ExperimentConfig, out_dir) -> int:
    started = time.time()
    out = Path(out_dir)
    try:
        program = load_config_pulse(config)
        model = config.resolve()[0]
        bad = validate(program, model)
        if bad:
            raise ConfigError("; ".join(str(v) for v in bad))
        out.mkdir(parents=True, exist_ok=True)
        for a, rep in evaluate_program(program, config).items():
            export_report(rep, "json", out / _report_name(a))
        _write_timing(out, "evaluate", started)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}")
        return 1
    return 0


def sweep_grid(spec: dict) -> np.ndarray:
    """Values of a sweep: explicit ``values`` or a log grid from ``start`` to ``stop``."""
    if "values" in spec:
        return np.asarray(spec["values"], float)
    try:
        start, stop = float(spec["start"]), float(spec["stop"])
    except KeyError:
        raise ConfigError("sweep needs values or start and stop") from None
    if not (start > 0 and stop > start):
        raise ConfigError("sweep grid needs 0 < start < stop")
    per = int(spec.get("points_per_decade", POINTS_PER_DECADE))
    count = int(round(np.log10(stop / start) * per)) + 1
    return np.logspace(np.log10(start), np.log10(stop), max(count, 2))


def sweep_point(axis: str, value: float, program: PulseProgram, config: ExperimentConfig,
                alpha: float) -> dict:
    """Report of ``program`` with one parameter changed, without reoptimisation."""
    model, noise, grads, target = config.resolve()
    noise = noise.replace(alpha=alpha)
    if axis == "samplerate":
        program, model, grads = rescale_samplerate(program, model, grads, value)
    elif axis == "sigma_db":
        noise = noise.replace(sigma_db=value)
    elif axis == "sigma_eps":
        noise = noise.replace(sigma_eps=(value,) * 3)
    elif axis == "s0":
        noise = noise.replace(s0=value)
    elif axis == "j23_residual":
        model = model.replace(residual_j23=value)
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    kernel = config.kernel(program.fs)
    nominal = evolve(render(program, kernel), grads, model, target)
    i_sys = 1 - average_gate_fidelity(target.matrix, nominal.v_c)
    rep = infidelity_report(program, grads, model, noise, target, n_real=config.n_real,
                            seed=config.seed, kernel=kernel, workers=config.workers)
    row = {c: float(getattr(rep, c)) for c in SWEEP_COLUMNS if hasattr(rep, c)}
    row.update(value=float(value), i_sys=float(i_sys))
    return row


def loglog_slope(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    keep = (x > 0) & (y > 0)
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


def run_sweep(config: ExperimentConfig, out_dir) -> int:
    """Evaluate a fixed pulse along one axis; writes sweep.csv and sweep_plot.json."""
    started = time.time()
    out = Path(out_dir)
    try:
        axis = config.sweep.get("axis")
        if axis not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
        grid = sweep_grid(config.sweep)
        program = load_config_pulse(config)
        out.mkdir(parents=True, exist_ok=True)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}")
        return 1
    alpha = float(config.sweep.get("alpha", config.alphas[-1]))
    rows = [sweep_point(axis, v, program, config, alpha) for v in grid]
    meta = {"config_digest": config.digest(), "seed": config.seed, "axis": axis, "alpha": alpha}
    _write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows, meta)
    plot = {**meta, "columns": {c: [r[c] for r in rows] for c in SWEEP_COLUMNS},
            "slopes": {c: loglog_slope([r["value"] for r in rows], [r[c] for r in rows])
                       for c in ("i_s", "i_f", "i_b", "i_total", "i_sys")}}
    (out / "sweep_plot.json").write_text(json.dumps(plot, indent=2) + "\n")
    _write_timing(out, "sweep", started)
    return 0
