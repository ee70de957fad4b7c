import json
import subprocess
import sys

import numpy as np
import pytest

from raman2d.cli import main
from raman2d.sim import read_profile_csv


def run(*argv):
    return main([str(a) for a in argv])


def test_simulate_pumps_off_decays_at_alpha(tmp_path):
    assert run("simulate", "--pumps", "off,off,off,off", "--out", tmp_path) == 0
    prof = read_profile_csv(tmp_path / "profile.csv")
    z = prof.grids.dist.points
    assert np.max(np.abs(prof.values - (-16.0 - 0.2 * z)[None, :])) <= 1e-6
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["outputs"] == ["profile.csv"]
    assert manifest["options"]["pumps"] == ["off"] * 4
    assert len(manifest["config_hash"]) == 16


def test_simulate_rerun_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run("simulate", "--pumps", "12,8,15,18", "--out", d, "--svg") == 0
    for name in ("profile.csv", "profile.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_malformed_config_names_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("length_km = 50\nalpha_sginal_db_km = 0.2\n")
    assert run("simulate", "--config", cfg, "--pumps", "0,0,0,0", "--out", tmp_path / "o") == 2
    err = capsys.readouterr().err
    assert "alpha_sginal_db_km" in err and ":2:" in err


def test_out_of_bounds_pump_is_config_error(tmp_path, capsys):
    assert run("simulate", "--pumps", "25,0,0,0", "--out", tmp_path) == 2
    assert "error" in capsys.readouterr().err


def test_numerical_failure_exit_code(tmp_path):
    cfg = tmp_path / "hot.cfg"
    cfg.write_text("raman_peak_efficiency = 5e4\n")
    with np.errstate(all="ignore"):
        assert run("simulate", "--config", cfg, "--pumps", "20,20,20,19", "--out", tmp_path / "o") == 3


def test_missing_and_corrupt_files_exit_4(tmp_path):
    assert run("eval", "--model", tmp_path / "none.rinv", "--dataset", tmp_path / "none.rds",
               "--out", tmp_path / "o") == 4
    bad = tmp_path / "bad.rds"
    bad.write_bytes(b"RDS1garbage")
    assert run("train", "--dataset", bad, "--out", tmp_path / "o", "--epochs", 1) == 4


def test_design_needs_one_target(tmp_path):
    assert run("design", "--out", tmp_path) == 2
    assert run("design", "--gain", 2, "--init", "cnn", "--out", tmp_path) == 2


def test_design_flat_gain(tmp_path):
    assert run("design", "--gain", 2.0, "--max-iter", 3, "--seed", 4, "--out", tmp_path) == 0
    res = json.loads((tmp_path / "result.json").read_text())
    assert res["best_cost_db"] == pytest.approx(0.5 * res["j0_db"] + 0.5 * res["j1_db"])
    assert len((tmp_path / "history.csv").read_text().splitlines()) == res["iterations"] + 2


def test_sweep_command(tmp_path):
    assert run("sweep", "--levels", 2, "--start", 1.0, "--end", 2.0, "--max-iter", 2,
               "--out", tmp_path, "--svg") == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert [lv["target_gain_db"] for lv in summary["levels"]] == [1.0, 2.0]
    assert (tmp_path / "convergence.svg").exists()


def test_dataset_train_eval_design_chain(tmp_path):
    d, m, e, s, x = (tmp_path / n for n in ("data", "model", "eval", "sim", "design"))
    assert run("gen-dataset", "--n", 12, "--seed", 3, "--out", d, "--csv") == 0
    meta = json.loads((d / "manifest.json").read_text())["metadata"]
    assert meta["seed"] == 3 and meta["noise_sigma"] == 0.05
    assert run("train", "--dataset", d / "dataset.rds", "--epochs", 2, "--n-val", 3, "--out", m) == 0
    curve = (m / "training_curve.csv").read_text().splitlines()
    assert curve[0] == "epoch,train_loss,val_loss" and len(curve) == 3
    assert run("eval", "--model", m / "model.rinv", "--dataset", d / "dataset.rds", "--out", e) == 0
    summary = json.loads((e / "summary.json").read_text())
    assert summary["count"] == 12 and len(summary["r2"]) == 4
    assert run("simulate", "--pumps", "10,12,14,16", "--out", s) == 0
    assert run("design", "--target", s / "profile.csv", "--init", "cnn", "--model", m / "model.rinv",
               "--max-iter", 3, "--out", x, "--svg") == 0
    res = json.loads((x / "result.json").read_text())
    assert len(res["cnn_prediction_dbm"]) == 4
    assert (x / "error.svg").exists()
    inputs = json.loads((x / "manifest.json").read_text())["inputs"]
    assert str(m / "model.rinv") in inputs


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "raman2d.cli", "simulate", "--pumps", "1,2,3",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert out.returncode == 2
    assert "four comma-separated" in out.stderr
