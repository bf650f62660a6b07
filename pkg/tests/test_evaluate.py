"""Evaluation harness: masking protocols, sweep mechanics, selective
prediction bookkeeping, frequency-vs-time masking variance."""

import numpy as np
import pytest

from dcer.batch import ModalityBatch, complete_presence
from dcer.config import EvalConfig, ModelConfig, ReconConfig
from dcer.evaluate import (
    apply_missing,
    eq9_experiment,
    evaluate_cell,
    sweep,
    uncertainty_report,
)
from dcer.model import DcerModel

TINY = ModelConfig(
    hidden=16, heads=2, queries=2, fusion_layers=2,
    audio_len=16, audio_dim=3, video_len=6, video_dim=5,
    text_len=5, text_vocab=11, wavelet_levels=2,
)


def tiny_batch(n=40, seed=0):
    rng = np.random.default_rng(seed)
    return ModalityBatch(
        audio=rng.normal(size=(n, 16, 3)).astype(np.float32),
        video=rng.normal(size=(n, 6, 5)).astype(np.float32),
        text=rng.integers(0, 11, size=(n, 5)).astype(np.int32),
        labels=rng.uniform(-3, 3, size=n).astype(np.float32),
        presence=complete_presence(n),
    )


def test_mr_zero_is_identity():
    batch = tiny_batch()
    out = apply_missing(batch, 0.0, "zero", seed=1)
    np.testing.assert_array_equal(out.audio, batch.audio)
    np.testing.assert_array_equal(out.video, batch.video)
    np.testing.assert_array_equal(out.text, batch.text)
    assert out.presence.all()


def test_zero_protocol_writes_zeros_and_flags():
    batch = tiny_batch()
    out = apply_missing(batch, 0.7, "zero", seed=2)
    dropped_rows = np.flatnonzero(~out.presence[:, 0])
    assert dropped_rows.size
    assert np.all(out.audio[dropped_rows] == 0.0)
    kept = np.flatnonzero(out.presence[:, 0])
    np.testing.assert_array_equal(out.audio[kept], batch.audio[kept])


def test_noise_protocol_writes_gaussian_and_same_pattern_as_zero():
    batch = tiny_batch()
    a = apply_missing(batch, 0.5, "zero", seed=3)
    b = apply_missing(batch, 0.5, "noise", seed=3)
    np.testing.assert_array_equal(a.presence, b.presence)
    rows = np.flatnonzero(~a.presence[:, 1])
    assert rows.size
    assert np.abs(b.video[rows]).std() > 0.5  # unit gaussian, not zeros
    assert np.all(a.video[rows] == 0.0)


def test_drop_rate_monte_carlo():
    batch = tiny_batch(n=5000, seed=4)
    out = apply_missing(batch, 0.3, "zero", seed=5)
    rate = 1.0 - out.presence.mean()
    assert abs(rate - 0.3) < 0.02
    assert out.presence.any(axis=1).all()


def test_subset_restriction_forces_modalities_missing():
    batch = tiny_batch()
    out = apply_missing(batch, 0.0, "zero", seed=6, subset="t")
    assert not out.presence[:, 0].any()
    assert not out.presence[:, 1].any()
    assert out.presence[:, 2].all()


def test_token_text_replacement_conventions():
    batch = tiny_batch()
    z = apply_missing(batch, 0.9, "zero", seed=7)
    rows = np.flatnonzero(~z.presence[:, 2])
    assert rows.size and np.all(z.text[rows] == 0)
    n = apply_missing(batch, 0.9, "noise", seed=7)
    assert n.text[rows].max() > 0


def test_sweep_cartesian_counts_and_csv(tmp_path):
    model = DcerModel(TINY, seed=0)
    cfg = EvalConfig(mrs=[0.0, 0.5], steps=[0, 1], protocols=["zero", "noise"],
                     subsets=["avt"], replicates=2)
    reports = sweep(model, tiny_batch(), cfg, ReconConfig(steps=0, sigma=0.0),
                    (-3, 3), tmp_path / "sweep.csv")
    assert len(reports) == 2 * 2 * 2 * 1 * 2
    lines = (tmp_path / "sweep.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + len(reports)
    assert lines[0].startswith("mr,steps,protocol,subset,seed")


def test_protocols_bit_identical_under_reconstruction_pipeline():
    # presence flags route reconstruction; replaced raw values are never
    # consumed, so both protocols yield identical predictions per seed
    model = DcerModel(TINY, seed=0)
    batch = tiny_batch()
    recon = ReconConfig(steps=1, sigma=0.0)
    a = evaluate_cell(model, batch, 0.5, 1, "zero", "avt", 0, recon, (-3, 3))
    b = evaluate_cell(model, batch, 0.5, 1, "noise", "avt", 0, recon, (-3, 3))
    assert a.mae == b.mae and a.pearson_corr == b.pearson_corr


def test_uncertainty_report_reject_zero_reproduces_acc2():
    model = DcerModel(TINY, seed=0)
    rep = uncertainty_report(
        model, tiny_batch(n=60, seed=8), 0.5, seed=0,
        recon=ReconConfig(steps=1, sigma=0.0), reject_fraction=0.0,
    )
    assert rep.acc2_keep == rep.acc2_all
    assert rep.acc_delta_at_reject_20pct == 0.0
    assert rep.n >= 1


def test_eq9_trivial_and_directional():
    vt, vf = eq9_experiment(0.0, trials=50, seed=0)
    assert vt == 0.0 and vf == 0.0
    vt, vf = eq9_experiment(1.0, trials=50, seed=0)
    assert vt == 0.0 and vf == 0.0
    vt, vf = eq9_experiment(0.5, trials=500, seed=0)
    assert vf < vt


def test_eq9_masking_variance_on_band_structured_signal_200_trials():
    # the within-modality compression premise: frequency-domain masking
    # spreads the loss, time-domain masking can delete the informative steps
    vt, vf = eq9_experiment(0.5, trials=200, seed=1)
    assert vf < vt
