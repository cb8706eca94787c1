import json

import numpy as np
import pytest

from stq import experiments as ex
from stq import spin_model as sm
from stq.cli import main
from stq.fidelity import CSV_COLUMNS, EvaluationReport
from stq.pulses import PulseProgram, save_pulse_csv

FAST = {"n": 8, "n_seeds": 1, "max_iter": 3, "n_real": 4, "alphas": [0.7]}


def write_config(path, **kw):
    path.write_text(json.dumps({**FAST, **kw}))
    return str(path)


def sample_report():
    return EvaluationReport(1e-4, 2e-4, 3e-4, 6e-4, 1e-5, 2e-6, 1.2e-5, 0.9993, 1e-3, 0.05,
                            {"alpha": 0.7})


def test_presets():
    model, noise, grads = ex.resolve_preset("gaas")
    assert (model.j0, model.fs) == (1.0, 1.0)
    assert grads.as_array() == pytest.approx([1.0, 7.0, -1.0])
    assert noise.sigma_db[0] == pytest.approx(0.3 * 0.0388)
    model, noise, grads = ex.resolve_preset("si")
    assert (model.j0, model.fs) == (0.1, 0.1)
    assert grads.as_array() == pytest.approx([0.1, 0.7, -0.1])
    assert noise.sigma_db == (0.0, 0.0, 0.0)
    with pytest.raises(ex.ConfigError):
        ex.resolve_preset("ge")


def test_config_validation():
    with pytest.raises(ex.ConfigError, match="unknown config keys"):
        ex.ExperimentConfig.from_dict({"gates": "cnot"})
    with pytest.raises(ex.ConfigError):
        ex.ExperimentConfig(n_seeds=0).resolve()
    with pytest.raises(ex.ConfigError):
        ex.ExperimentConfig(model={"eps_min": 1.0, "eps_max": 0.0}).resolve()
    with pytest.raises(ex.ConfigError):
        ex.ExperimentConfig(weights={"delta": -1}).problem()
    with pytest.raises(ex.ConfigError):
        ex.ExperimentConfig(frozen_channels=[13]).resolve()


def test_config_overrides_and_digest():
    cfg = ex.ExperimentConfig(noise={"alpha": 0.5, "sigma_eps": [0.01, 0.01, 0.01]})
    _, noise, _, _ = cfg.resolve()
    assert noise.alpha == 0.5 and noise.sigma_eps == (0.01, 0.01, 0.01)
    assert cfg.digest() == ex.ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))).digest()
    assert cfg.digest() != cfg.merged(seed=1).digest()
    assert cfg.merged(seed=None).seed == cfg.seed


def test_refine_stage_searches_without_noise():
    cfg = ex.ExperimentConfig(refine_iter=5, weights={"i_f": 2.0}, seed_high=-0.3)
    pb = cfg.problem()
    assert pb.weights == ex.Weights.noiseless() and pb.seed_high == -0.3
    assert ex.ExperimentConfig(weights={"i_f": 2.0}).problem().weights.i_f == 2.0
    samples = pb.to_samples(pb.random_theta(0))
    assert samples.max() <= -0.3


def test_export_json_and_csv(tmp_path):
    rep = sample_report()
    text = ex.export_report(rep, "csv", tmp_path / "r.csv")
    lines = text.splitlines()
    assert lines[0] == "i_s,i_f,i_b,i_total,l_i,l_c,l_total,f_total"
    assert [float(v) for v in lines[1].split(",")] == [getattr(rep, c) for c in CSV_COLUMNS]
    ex.export_report(rep, "json", tmp_path / "r.json")
    assert ex.load_report(tmp_path / "r.json") == rep
    for bad in (None, {}):
        with pytest.raises(ValueError, match="empty"):
            ex.export_report(bad)
    with pytest.raises(ValueError):
        ex.export_report(rep, "xml")


def test_sweep_grid():
    grid = ex.sweep_grid({"start": 0.1, "stop": 10})
    assert len(grid) == 15 and grid[0] == pytest.approx(0.1) and grid[-1] == pytest.approx(10)
    assert list(ex.sweep_grid({"values": [1, 2]})) == [1, 2]
    with pytest.raises(ex.ConfigError):
        ex.sweep_grid({"start": 1})
    assert ex.loglog_slope([1, 10, 100], [2, 200, 20000]) == pytest.approx(2)


def test_cli_optimize_writes_outputs(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    code = main(["optimize", "--config", cfg, "--out", str(tmp_path / "o")])
    assert code in (0, 2)
    out = tmp_path / "o"
    for name in ("pulse.csv", "seeds.csv", "report_alpha0.7.json", "config.json", "optimize.timing.json"):
        assert (out / name).exists()
    assert "channel,k,eps_mV" in (out / "pulse.csv").read_text().splitlines()
    saved = json.loads((out / "config.json").read_text())
    assert saved["n"] == 8 and saved["preset"] == "gaas"


def test_cli_flags_override_file(tmp_path):
    cfg = write_config(tmp_path / "c.json", seed=5)
    main(["optimize", "--config", cfg, "--seed", "2", "--n", "6", "--out", str(tmp_path / "o")])
    saved = json.loads((tmp_path / "o" / "config.json").read_text())
    assert saved["seed"] == 2 and saved["n"] == 6 and saved["max_iter"] == 3


def test_cli_runs_are_byte_identical(tmp_path):
    cfg = write_config(tmp_path / "c.json", n_seeds=2)
    for d in ("a", "b"):
        assert main(["optimize", "--config", cfg, "--out", str(tmp_path / d)]) in (0, 2)
    for name in ("pulse.csv", "seeds.csv", "report_alpha0.7.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cli_invalid_input_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["optimize", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert main(["optimize", "--config", write_config(tmp_path / "c.json", n_real=1),
                 "--out", str(tmp_path / "o")]) == 1
    assert main(["evaluate", "--out", str(tmp_path / "o")]) == 1
    assert main(["export", str(tmp_path / "missing.json")]) == 1
    assert "error" in capsys.readouterr().err


def test_cli_evaluate_and_export(tmp_path, capsys):
    model = sm.DeviceModel()
    prog = PulseProgram(np.full((3, 8), -0.5), 1.0)
    prog.samples[:, -4:] = model.eps_min
    save_pulse_csv(tmp_path / "p.csv", prog)
    cfg = write_config(tmp_path / "c.json")
    out = tmp_path / "o"
    assert main(["evaluate", "--config", cfg, "--pulse", str(tmp_path / "p.csv"),
                 "--alpha", "0", "--alpha", "0.7", "--out", str(out)]) == 0
    assert (out / "report_alpha0.json").exists() and (out / "report_alpha0.7.json").exists()
    capsys.readouterr()
    assert main(["export", str(out / "report_alpha0.7.json"), "--format", "csv"]) == 0
    assert capsys.readouterr().out.startswith(",".join(CSV_COLUMNS))
    # out-of-bounds pulse is rejected
    prog.samples[0, 0] = 10.0
    save_pulse_csv(tmp_path / "bad.csv", prog)
    assert main(["evaluate", "--config", cfg, "--pulse", str(tmp_path / "bad.csv"),
                 "--out", str(out)]) == 1


def test_cli_sweep(tmp_path):
    model = sm.DeviceModel()
    prog = PulseProgram(np.full((3, 8), -0.5), 1.0)
    prog.samples[:, -4:] = model.eps_min
    save_pulse_csv(tmp_path / "p.csv", prog)
    cfg = write_config(tmp_path / "c.json", sweep={"values": [0.5, 1.0, 2.0]})
    out = tmp_path / "s"
    assert main(["sweep", "--config", cfg, "--pulse", str(tmp_path / "p.csv"), "--axis", "samplerate",
                 "--out", str(out)]) == 0
    plot = json.loads((out / "sweep_plot.json").read_text())
    assert plot["columns"]["value"] == [0.5, 1.0, 2.0]
    assert set(plot["slopes"]) == {"i_s", "i_f", "i_b", "i_total", "i_sys"}
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("# config_digest") and len([l for l in lines if not l.startswith("#")]) == 4
