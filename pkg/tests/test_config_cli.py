import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from tapkinn.cli import main
from tapkinn.config import ConfigError, build_stages, load_config, validate_config
from tapkinn.pipeline import parse_fit_report

TINY = """preset = "single-ideal"
[kinn]
iterations_per_epoch = 20
n_restarts = 2
"""


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.toml"
    cfg.write_text(TINY)
    out = root / "run"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    return cfg, out


def test_presets_load_and_validate():
    for name in ("single-ideal", "multi-ideal", "multi-practical", "noise-sweep"):
        cfg = load_config(name)
        validate_config(cfg)
        assert build_stages(cfg)
    cfg = load_config("multi-practical", seed=9)
    assert cfg["kinn"]["seed"] == 9 and cfg["dataset"]["noise_seed"] == 9


def test_config_errors_name_the_field(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('preset = "multi-ideal"\n[dataset]\ntrain_pulses = [0, 1]\n'
                   'test_pulses = [1, 2]\n')
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "dataset.test_pulses" in capsys.readouterr().err
    with pytest.raises(ConfigError, match="kinn.step_size"):
        load_config({"preset": "single-ideal", "kinn": {"step_size": -1.0}})
    with pytest.raises(ConfigError, match="unknown sections"):
        load_config({"bogus": {}})


def test_unknown_preset_and_bad_stages(tmp_path, capsys):
    assert main(["simulate", "--config", "no-such-preset", "--out", str(tmp_path)]) == 2
    assert "no-such-preset" in capsys.readouterr().err
    assert main(["run", "--config", "single-ideal", "--stages", "fit,nope",
                 "--out", str(tmp_path)]) == 2


def test_missing_artifact_exit_code(tmp_path, capsys):
    assert main(["fit", "--config", "single-ideal", "--out", str(tmp_path / "empty")]) == 4
    assert "missing artifact" in capsys.readouterr().err


def test_run_produces_all_artifacts(tiny_run):
    _, out = tiny_run
    for rel in ("simulate/pulse_0_outlet.csv", "simulate/pulse_0_thinzone.csv",
                "dataset/train.csv", "dataset/scaling.csv", "fit/fit_report.txt",
                "fit/params.txt", "fit/history.csv", "evaluate/evaluation_report.txt",
                "evaluate/parity.csv", "evaluate/rebuild.csv", "baseline/baseline_report.txt"):
        assert (out / rel).is_file(), rel
    fit = parse_fit_report(out / "fit" / "fit_report.txt")
    assert fit["method"] == "kinn" and len(fit["k"]) == 6
    text = (out / "evaluate" / "evaluation_report.txt").read_text()
    assert "sensitivity proxy" in text and "mean_abs_log_ratio" in text
    header = (out / "simulate" / "pulse_0_outlet.csv").read_text().splitlines()[0]
    assert header.startswith("time")


def test_rerunning_a_stage_is_deterministic(tiny_run):
    cfg, out = tiny_run
    before = (out / "fit" / "fit_report.txt").read_bytes()
    params = (out / "fit" / "params.txt").read_bytes()
    assert main(["fit", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "fit" / "fit_report.txt").read_bytes() == before
    assert (out / "fit" / "params.txt").read_bytes() == params
    assert main(["run", "--config", str(cfg), "--out", str(out), "--stages", "fit"]) == 0
    assert (out / "fit" / "fit_report.txt").read_bytes() == before


def test_simulated_csvs_are_byte_identical(tmp_path, tiny_run):
    cfg, out = tiny_run
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    for name in ("pulse_0_outlet.csv", "pulse_0_thinzone.csv"):
        assert (tmp_path / "simulate" / name).read_bytes() == \
            (out / "simulate" / name).read_bytes()


def test_evaluate_refuses_mismatched_manifest(tiny_run, capsys):
    cfg, out = tiny_run
    assert main(["evaluate", "--config", str(cfg), "--out", str(out), "--seed", "5"]) == 4
    assert "manifest" in capsys.readouterr().err


def test_compare(tmp_path, tiny_run, capsys):
    _, out = tiny_run
    rep = out / "fit" / "fit_report.txt"
    assert main(["compare", str(rep), "--out", str(tmp_path)]) == 2
    assert main(["compare", str(rep), str(rep), "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert "mean|ln|" in text
    csv_text = (tmp_path / "comparison.csv").read_text().splitlines()
    header = csv_text[0].split(",")
    second = csv_text[2].split(",")
    assert any(c.startswith("delta_ln_") for c in header)
    for col, val in zip(header, second):
        if col.startswith("delta_ln_"):
            assert float(val) == 0.0
    base = out / "baseline" / "baseline_report.txt"
    assert main(["compare", str(rep), str(base), "--out", str(tmp_path)]) == 0
    other = tmp_path / "other.txt"
    other.write_text(rep.read_text().replace("network = co-oxidation", "network = other"))
    assert main(["compare", str(rep), str(other), "--out", str(tmp_path)]) == 2


def test_console_script_help():
    exe = shutil.which("tapkinn")
    cmd = [exe] if exe else [sys.executable, "-m", "tapkinn.cli"]
    res = subprocess.run(cmd + ["--help"], capture_output=True, text=True, check=False)
    assert res.returncode == 0 and "simulate" in res.stdout
