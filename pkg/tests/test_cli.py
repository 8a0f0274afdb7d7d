import csv
import hashlib
import json

import numpy as np
import pytest

from rectflow.cli import EXPERIMENTS, RunOutput, config_hash, main, resolve_config, run_experiment
from rectflow.errors import ParameterError

SMALL_FIG3 = {"n": 30, "M": 20, "bandwidths": [0.3, 1.0], "T": 10}


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_resolve_layers_and_unknown_keys():
    name, cfg = resolve_config("fig3", {"n": 50}, seed=7, sets=["M=10", "bandwidths=[0.5]"])
    assert name == "fig3_trajectories_1d"
    assert cfg["n"] == 50 and cfg["M"] == 10 and cfg["bandwidths"] == [0.5] and cfg["seed"] == 7
    assert cfg["T"] == EXPERIMENTS[name][1]["T"]
    with pytest.raises(ParameterError):
        resolve_config("fig3", {"bogus": 1})
    with pytest.raises(ParameterError):
        resolve_config("fig3", sets=["noequals"])
    with pytest.raises(ParameterError):
        resolve_config("fig9")


def test_fig1_values_and_manifest(tmp_path):
    out, man = run_experiment("fig1", out=str(tmp_path))
    paths = _rows(f"{out}/paths.csv")
    row = next(r for r in paths if float(r["x"]) == 1.0 and float(r["t"]) == 0.5)
    assert float(row["z"]) == pytest.approx(0.70710678, abs=1e-8)
    vel = _rows(f"{out}/velocity.csv")
    assert float(next(r for r in vel if float(r["z"]) == 1.0 and float(r["t"]) == 0.0)["v"]) == pytest.approx(-1.0)
    for key in ("experiment", "config_hash", "files", "row_counts", "sha256", "wall_clock_seconds", "warnings"):
        assert key in man
    assert man["row_counts"]["paths.csv"] == len(paths)
    with open(f"{out}/paths.csv") as fh:
        assert hashlib.sha256(fh.read().encode()).hexdigest() == man["sha256"]["paths.csv"]
    with open(f"{out}/resolved_config.json") as fh:
        assert config_hash(json.load(fh)) == man["config_hash"]
    svg = open(f"{out}/plot.svg").read()
    assert 'viewBox="0 0 800 600"' in svg
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".")]


def test_fig3_truth_and_determinism(tmp_path):
    a, man = run_experiment("fig3", SMALL_FIG3, out=str(tmp_path / "a"))
    b, _ = run_experiment("fig3", SMALL_FIG3, out=str(tmp_path / "b"))
    truth = _rows(f"{a}/truth.csv")
    row = next(r for r in truth if float(r["x"]) == 1.0 and float(r["t"]) == 0.5)
    assert float(row["z"]) == pytest.approx(np.sqrt(0.5), abs=1e-12)
    for f in ("truth.csv", "bands.csv", "trajectories.csv"):
        assert open(f"{a}/{f}", "rb").read() == open(f"{b}/{f}", "rb").read()
    assert man["bandwidths"] == [0.3, 1.0]
    bands = _rows(f"{a}/bands.csv")
    assert all(float(r["lower"]) <= float(r["mean"]) <= float(r["upper"]) for r in bands)


def test_seed_changes_output(tmp_path):
    a, _ = run_experiment("fig3", SMALL_FIG3, out=str(tmp_path / "a"), seed=1)
    b, _ = run_experiment("fig3", SMALL_FIG3, out=str(tmp_path / "b"), seed=2)
    assert open(f"{a}/bands.csv").read() != open(f"{b}/bands.csv").read()


def test_main_exit_codes(tmp_path, capsys):
    assert main(["fig1", "--out", str(tmp_path)]) == 0
    assert "PASS" in capsys.readouterr().out
    assert main(["fig1", "--out", str(tmp_path), "--set", "nope=1"]) == 2
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"starts": [20.0]}))
    assert main(["fig2", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_main_exit_code_follows_acceptance_checks(tmp_path, capsys, monkeypatch):
    def runner(cfg):
        res = RunOutput()
        res.check("informational", 0.0, "> 1", False, acceptance=False)
        res.check("gated", 1.0, "> 0", cfg["gate"])
        return res
    monkeypatch.setitem(EXPERIMENTS, "dummy", (runner, {"gate": True}))
    assert main(["dummy", "--out", str(tmp_path)]) == 0
    assert main(["dummy", "--out", str(tmp_path), "--set", "gate=false"]) == 1
    assert "FAIL gated" in capsys.readouterr().out
