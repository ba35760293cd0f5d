import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from koopquant.cli import main
from koopquant.dynamics import TrajectorySet
from koopquant.ident import LinearPredictor

SMALL = {"n_traj": 2, "steps": 60, "n_test_traj": 1, "dictionary": {"kind": "tps", "n_centers": 8},
         "word_lengths": [4, 6, 8], "n_monte_carlo": 2,
         "mpc": {"duration": 0.1, "x0": [0.0, 0.0], "horizon": 10,
                 "reference": {"levels": [0.5], "switch_every": 100}}}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump({**SMALL, "output_dir": str(tmp_path / "sweep")}))
    return path


def last_json(capsys):
    return json.loads(capsys.readouterr().out)


def test_simulate_identify_predict_mpc(tmp_path, config, capsys):
    data, pred = tmp_path / "d.npz", tmp_path / "p.npz"
    assert main(["simulate", "--config", str(config), "--out", str(data)]) == 0
    assert TrajectorySet.load_npz(data).X.shape == (2, 2, 61)
    capsys.readouterr()
    assert main(["identify", "--config", str(config), "--data", str(data), "--mode", "state-input",
                 "--word-length", "8", "--out", str(pred)]) == 0
    assert last_json(capsys)["N"] == 10
    assert LinearPredictor.load(pred).meta["quantization"]["word_length"] == 8
    assert main(["predict", "--predictor", str(pred), "--data", str(data), "--csv", str(tmp_path / "r.csv")]) == 0
    assert last_json(capsys)["prediction_error"] > 0
    assert main(["mpc", "--config", str(config), "--predictor", str(pred), "--out", str(tmp_path / "m.csv")]) == 0
    assert np.isfinite(last_json(capsys)["J"])


def test_sweep_writes_outputs(tmp_path, config, capsys):
    assert main(["sweep", "--config", str(config)]) == 0
    out = last_json(capsys)
    assert out["records"] == 6
    assert (tmp_path / "sweep" / "records.csv").exists()
    assert (tmp_path / "sweep" / "manifest.json").exists()


def test_validate_quantizer_exit_codes(capsys):
    assert main(["validate-quantizer", "--samples", "20000"]) == 0
    assert last_json(capsys)["passed"] is True
    # an impossible z threshold reports failure as a numerical exit
    assert main(["validate-quantizer", "--samples", "20000", "--z-max", "0"]) == 2


def test_configuration_errors(tmp_path, capsys):
    assert main(["sweep", "--config", str(tmp_path / "missing.yaml")]) == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("colour: blue\n")
    assert main(["sweep", "--config", str(bad)]) == 1
    assert main(["identify", "--data", str(tmp_path / "none.npz"), "--out", str(tmp_path / "p.npz")]) == 1
    assert main(["validate-quantizer", "--eps", "-1"]) == 1
    with pytest.raises(SystemExit) as info:
        main(["sweep", "--bogus"])
    assert info.value.code == 1


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "koopquant.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for name in ("simulate", "identify", "predict", "mpc", "sweep", "validate-quantizer"):
        assert name in out.stdout
