"""Command-line interface: artifact emission, exit codes, config echo."""

import json

import numpy as np
import pytest

from dcer.cli import main

TINY_SETS = [
    "--set", "model.hidden=16", "--set", "model.heads=2",
    "--set", "model.queries=2", "--set", "model.fusion_layers=2",
    "--set", "model.audio_len=16", "--set", "model.audio_dim=3",
    "--set", "model.video_len=6", "--set", "model.video_dim=5",
    "--set", "model.text_len=5", "--set", "model.text_vocab=17",
    "--set", "model.wavelet_levels=2",
    "--set", "data.n=60", "--set", "data.t_audio=16", "--set", "data.d_audio=3",
    "--set", "data.t_video=6", "--set", "data.d_video=5",
    "--set", "data.t_text=5", "--set", "data.vocab=17",
    "--set", "train.batch_size=16", "--set", "train.lr=1e-3",
]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data_dir = root / "data"
    rc = main(["generate-data", "--n", "60", "--seed", "7", "--out", str(data_dir)] + TINY_SETS)
    assert rc == 0
    assert (data_dir / "manifest.jsonl").exists()
    assert (data_dir / "effective_config.json").exists()

    train_dir = root / "run"
    rc = main([
        "train", "--data", str(data_dir), "--epochs", "1",
        "--out", str(train_dir),
    ] + TINY_SETS)
    assert rc == 0
    assert (train_dir / "checkpoint.dctc").exists()
    assert (train_dir / "metrics.csv").exists()
    return root, data_dir, train_dir


def test_metrics_csv_header(workspace):
    _, _, train_dir = workspace
    header = (train_dir / "metrics.csv").read_text().splitlines()[0]
    assert header == "epoch,split,mae,corr,acc7,acc2,f1,loss_pred,loss_recon,loss_energy,loss_joint"


def test_sweep_cartesian_cell_count(workspace):
    root, data_dir, train_dir = workspace
    out = root / "sweep"
    rc = main([
        "sweep", "--checkpoint", str(train_dir / "checkpoint.dctc"),
        "--data", str(data_dir), "--mrs", "0,0.5", "--Ts", "0,1",
        "--protocols", "zero,noise", "--replicates", "2",
        "--out", str(out),
    ] + TINY_SETS)
    assert rc == 0
    rows = (out / "sweep.csv").read_text().strip().splitlines()
    assert len(rows) - 1 == 2 * 2 * 2 * 2  # cells x replicates


def test_reconstruct_jsonl_records(workspace):
    root, data_dir, train_dir = workspace
    out = root / "recon"
    rc = main([
        "reconstruct", "--checkpoint", str(train_dir / "checkpoint.dctc"),
        "--data", str(data_dir), "--mr", "0.5", "--out", str(out),
    ] + TINY_SETS)
    assert rc == 0
    lines = (out / "reconstruct.jsonl").read_text().strip().splitlines()
    rec = json.loads(lines[0])
    assert set(rec) == {"id", "missing_modalities", "final_energy", "prediction"}


def test_uncertainty_report_artifact(workspace):
    root, data_dir, train_dir = workspace
    out = root / "unc"
    rc = main([
        "uncertainty", "--checkpoint", str(train_dir / "checkpoint.dctc"),
        "--data", str(data_dir), "--mr", "0.5", "--out", str(out),
    ] + TINY_SETS)
    assert rc == 0
    doc = json.loads((out / "uncertainty.json").read_text())
    assert "spearman_rho" in doc and "acc_delta_at_reject_20pct" in doc


def test_eq9_artifact(tmp_path):
    out = tmp_path / "eq9"
    rc = main(["eq9", "--rate", "0.5", "--trials", "100", "--out", str(out)])
    assert rc == 0
    doc = json.loads((out / "eq9.json").read_text())
    assert doc["var_freq"] < doc["var_time"]


def test_grad_check_exit_code(tmp_path):
    rc = main(["grad-check", "--out", str(tmp_path / "gc")])
    assert rc == 0
    assert (tmp_path / "gc" / "grad_check.csv").exists()


def test_unknown_override_exits_one(tmp_path):
    rc = main(["eq9", "--set", "nope.key=1", "--out", str(tmp_path / "x")])
    assert rc == 1


def test_effective_config_echo_reproducibility(workspace):
    _, data_dir, _ = workspace
    doc = json.loads((data_dir / "effective_config.json").read_text())
    assert doc["data"]["n"] == 60
    assert doc["data"]["seed"] == 7
