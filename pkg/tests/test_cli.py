import json
import subprocess
import sys

import pytest

from impactcal.cli import main

SIM = """
[taq]
min_valid_days = 1
[sim]
n_windows = {n}
n_instruments = 2
sigma_schedule = [0.01, 0.02, 0.03, 0.04]
ticks_per_window = 20
output = "{output}"
[run]
seed = 11
"""


def run(*argv):
    return main([str(a) for a in argv])


def test_optimize_linear_case(tmp_path):
    out = tmp_path / "x.json"
    assert run("optimize", "--alpha", 1, "--beta", 1, "--gamma", 1, "--eta", 1, "--X", 1, "--T", 1, "-o", out) == 0
    doc = json.loads(out.read_text())
    r = doc["result"]["realized"]
    assert (r["lower"], r["upper"]) == (1.0, 2.0)
    assert not r["lower_attained"] and not r["upper_attained"]
    assert doc["result"]["permanent"]["lower"] == doc["result"]["permanent"]["upper"] == 1.0
    assert doc["schema_version"] == 1 and len(doc["config_hash"]) == 64


def test_optimize_uncovered_pair_is_data_error(tmp_path, capsys):
    rc = run("optimize", "--alpha", 0.7, "--beta", 0.6, "--gamma", 1, "--eta", 1, "--X", 1, "--T", 1,
             "-o", tmp_path / "x.json")
    assert rc == 2 and "closed-form" in capsys.readouterr().err


def test_usage_errors_exit_one(tmp_path, capsys):
    assert run("calibrate") == 1
    assert run("frobnicate") == 1
    assert run("optimize", "--alpha", 1, "--beta", 1, "--gamma", 1, "--eta", 1, "--X", 1, "--T", 1,
               "-o", tmp_path / "x.json", "--set", "nope=1") == 1
    assert "unknown config keys" in capsys.readouterr().err


def test_empty_window_file_is_data_error(tmp_path, capsys):
    for content in ("", "instrument,date,window_index,v,V,sigma,I,J,T,T_post\n"):
        p = tmp_path / "w.csv"
        p.write_text(content)
        assert run("calibrate", p, "-o", tmp_path / "f.json") == 2
        assert "no observations" in capsys.readouterr().err


def test_missing_and_malformed_inputs(tmp_path):
    assert run("calibrate", tmp_path / "none.csv", "-o", tmp_path / "f.json") == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    assert run("calibrate", bad, "-o", tmp_path / "f.json") == 2
    assert run("ingest", tmp_path / "nodir", "-o", tmp_path / "w.csv") == 2


def test_too_few_windows_is_data_error(tmp_path):
    cfg = tmp_path / "sim.toml"
    cfg.write_text(SIM.format(n=20, output="windows"))
    w = tmp_path / "w.csv"
    assert run("simulate", cfg, "-o", w) == 0
    assert run("calibrate", w, "-o", tmp_path / "f.json") == 2


def pipeline(root, cfg):
    ticks, w = root / "ticks", root / "windows.csv"
    assert run("simulate", cfg, "-o", ticks, "--planted", root / "planted.csv") == 0
    assert run("ingest", ticks, "-o", w, "--config", cfg) == 0
    for model in ("full", "baseline"):
        assert run("calibrate", w, "--model", model, "-o", root / f"{model}.json", "--config", cfg) == 0
    assert run("assess", w, root / "full.json", root / "baseline.json", "-o", root / "report.json",
               "--config", cfg) == 0
    return sorted(p for p in root.rglob("*") if p.is_file())


def test_pipeline_is_byte_identical(tmp_path):
    cfg = tmp_path / "sim.toml"
    cfg.write_text(SIM.format(n=150, output="ticks"))
    a = pipeline(tmp_path / "a", cfg)
    b = pipeline(tmp_path / "b", cfg)
    assert [p.relative_to(tmp_path / "a") for p in a] == [p.relative_to(tmp_path / "b") for p in b]
    for x, y in zip(a, b):
        assert x.read_bytes() == y.read_bytes(), x.name
    w = (tmp_path / "a" / "windows.csv").read_text().splitlines()
    assert w[1:] == (tmp_path / "a" / "planted.csv").read_text().splitlines()[1:] or len(w) > 300
    rep = json.loads((tmp_path / "a" / "report.json").read_text())["result"]
    assert [r["model_label"] for r in rep["reports"]] == ["full:full", "baseline:baseline"]
    rows = (tmp_path / "a" / "report.csv").read_text().splitlines()
    assert rows[0] == "model_label,margin,crps,bic,n_obs" and len(rows) == 7


def test_ingest_drops_thin_instruments(tmp_path):
    cfg = tmp_path / "sim.toml"
    cfg.write_text(SIM.format(n=15, output="ticks"))
    assert run("simulate", cfg, "-o", tmp_path / "t") == 0
    assert run("ingest", tmp_path / "t", "-o", tmp_path / "w.csv", "--set", "min_valid_days=2") == 0
    assert (tmp_path / "w.csv").read_text().count("\n") == 1


def test_fit_json_config_parses_back(tmp_path):
    from impactcal.config import RunConfig

    cfg = tmp_path / "sim.toml"
    cfg.write_text(SIM.format(n=300, output="windows"))
    assert run("simulate", cfg, "-o", tmp_path / "w.csv") == 0
    assert run("calibrate", tmp_path / "w.csv", "-o", tmp_path / "f.json", "--config", cfg) == 0
    doc = json.loads((tmp_path / "f.json").read_text())
    assert RunConfig.from_dict(doc["config"]).seed == 11
    assert doc["kind"] == "fit" and doc["result"]["n_obs"] == 600


def test_module_entry_point(tmp_path):
    out = tmp_path / "x.json"
    proc = subprocess.run([sys.executable, "-m", "impactcal", "optimize", "--alpha", "0.7", "--beta", "1",
                           "--gamma", "1", "--eta", "0", "--X", "1", "--T", "1", "-o", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(out.read_text())["result"]["realized"]["case"] == "beta=1,alpha<1"
