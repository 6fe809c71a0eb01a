import json

import numpy as np
import pytest

from neurokinect.cli import main
from neurokinect.config import SEED_ENV, load_config, parse_config
from neurokinect.errors import InvalidConfig, MissingFile
from neurokinect.train import read_metrics

SMALL = {
    "data": {"synth": {"n_channels": 8, "n_trials": 12, "informative_channels": 3, "seed": 5}},
    "model": {"conv_branches": [[4, "relu"], [4, "elu"]], "lstm_hidden": 8, "dense_widths": [16]},
    "train": {"epochs": 2, "batch_size": 50, "seed": 1},
}


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "run.json"
    p.write_text(json.dumps(SMALL))
    return p


def run_chain(cfg_file, out, *extra):
    for cmd in ("dataset", "train", "eval", "report"):
        assert main([cmd, "--config", str(cfg_file), "--out", str(out), *extra]) == 0, cmd


def test_defaults_parse():
    cfg = parse_config({}, env={})
    assert cfg.window.lags == 10 and cfg.window.transfer_delay == 4
    assert cfg.train.epochs == 15 and cfg.train.batch_size == 100
    assert cfg.qc.rmse_threshold == 100.0


def test_unknown_keys_rejected():
    with pytest.raises(InvalidConfig):
        parse_config({"trian": {}}, env={})
    with pytest.raises(InvalidConfig):
        parse_config({"train": {"epoch": 3}}, env={})
    with pytest.raises(InvalidConfig):
        parse_config({"data": {"path": "x", "synth": {}}}, env={})


def test_qc_threshold_presets():
    assert parse_config({"qc": {"rmse_threshold": "lenient"}}, env={}).qc.rmse_threshold == 150.0
    assert parse_config({"qc": {"rmse_threshold": "off"}}, env={}).qc.rmse_threshold == float("inf")
    with pytest.raises(InvalidConfig):
        parse_config({"qc": {"rmse_threshold": "loose"}}, env={})


def test_env_seed_override(cfg_file):
    assert load_config(cfg_file, env={}).train.seed == 1
    assert load_config(cfg_file, env={SEED_ENV: "7"}).train.seed == 7
    with pytest.raises(InvalidConfig):
        load_config(cfg_file, env={SEED_ENV: "seven"})


def test_overrides(cfg_file):
    cfg = load_config(cfg_file, ["train.epochs=4", "window.lags=6"], env={})
    assert cfg.train.epochs == 4 and cfg.model_for(8).window_steps == 7
    with pytest.raises(MissingFile):
        load_config(cfg_file.parent / "nope.json")


def test_config_round_trips_through_dict(cfg_file):
    cfg = load_config(cfg_file, env={})
    assert parse_config(cfg.to_dict(), env={}) == cfg


def test_cli_user_errors_exit_2(tmp_path, cfg_file, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"lr": 0.01, "momentum": 0.9}}))
    assert main(["dataset", "--config", str(bad), "--out", str(tmp_path / "r")]) == 2
    err = json.loads(capsys.readouterr().err)["error"]
    assert err["kind"] == "InvalidConfig" and "momentum" in err["message"]
    assert main(["train", "--config", str(cfg_file), "--out", str(tmp_path / "empty")]) == 2
    assert json.loads(capsys.readouterr().err)["error"]["kind"] == "DatasetMissing"
    assert main(["qc", "--data-dir", str(tmp_path / "missing"), "--out", str(tmp_path / "q")]) == 2


def test_full_chain_and_append_only(tmp_path, cfg_file):
    out = tmp_path / "run"
    run_chain(cfg_file, out)
    for name in ("dataset.bin", "dataset_qc.csv", "train_report.csv", "model.ckpt", "metrics.csv",
                 "predictions_test.csv", "report.csv", "report_x.svg", "trajectory.svg"):
        assert (out / name).is_file(), name
    metrics = read_metrics(out / "metrics.csv")
    assert set(metrics) == {"train", "val", "test"} and np.isfinite(metrics["test"].rho_3d)
    log = json.loads((out / "run_manifest.json").read_text())["commands"]
    assert [c["command"] for c in log] == ["dataset", "train", "eval", "report"]
    assert all(c["status"] == "ok" for c in log)
    assert log[2]["inputs"] and "metrics.csv" in log[2]["outputs"]

    # rerunning into the same directory must not clobber artifacts
    assert main(["eval", "--config", str(cfg_file), "--out", str(out)]) == 2
    assert json.loads((out / "run_manifest.json").read_text())["commands"][-1]["status"] == "failed"
    assert main(["eval", "--config", str(cfg_file), "--out", str(out), "--overwrite"]) == 0


def test_two_runs_give_identical_artifacts(tmp_path, cfg_file):
    run_chain(cfg_file, tmp_path / "a")
    run_chain(cfg_file, tmp_path / "b")
    for name in ("dataset.bin", "model.ckpt", "train_report.csv", "metrics.csv", "predictions_test.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_synth_then_qc_and_erp_from_disk(tmp_path, cfg_file):
    data = tmp_path / "data"
    assert main(["synth", "--config", str(cfg_file), "--out", str(data)]) == 0
    out = tmp_path / "run"
    assert main(["qc", "--data-dir", str(data), "--threshold", "lenient", "--out", str(out)]) == 0
    rows = (out / "qc.csv").read_text().splitlines()
    assert len(rows) == 13
    assert main(["erp", "--data-dir", str(data), "--set", "erp.fs=25", "--out", str(out)]) == 0
    assert len((out / "erp.csv").read_text().splitlines()) == 176
    assert main(["preprocess", "--data-dir", str(data), "--out", str(out)]) == 0
    seg = np.load(out / "segments.npz")
    assert seg["t000/eeg"].shape[0] == 8
