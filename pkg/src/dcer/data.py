"""Synthetic multimodal dataset with known frequency-band structure.

The latent sentiment y drives all three modalities: a slow sinusoid (audio,
captured by the coarse wavelet approximation) plus a mid-band component with
amplitude |y|/3; a low-frequency 2D cosine pattern (video) buried in noise
that is concentrated in high radial-frequency bands; and token statistics
(text) where the excess of positive-token draws over negative-token draws
tracks y. Each modality carries independent amplitude jitter, so any single
modality is predictive but noisy and the combination is better than each
part.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Tuple

import numpy as np

from .batch import ModalityBatch, complete_presence
from .config import DataConfig
from .errors import FormatError, InputError
from .frequency import dct_matrix, radial_frequency_grid
from .metrics import pearson
from .storage import read_container, write_container

POSITIVE_TOKENS = range(0, 8)
NEGATIVE_TOKENS = range(8, 16)

# Per-modality amplitude jitter: the irreducible per-sample noise that keeps
# even an oracle readout imperfect on a single modality.
_JITTER_SCALE = 0.4
_VIDEO_PATTERN_GAIN = 2.0
_VIDEO_LOW_BAND_FLOOR = 0.35
_VIDEO_BAND_SPLIT = 0.4
_TEXT_REPLACE_RATE = 0.4


def generate(cfg: DataConfig) -> ModalityBatch:
    """Deterministically generate the full dataset in memory."""
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, 0xDA7A])
    n = cfg.n
    y = rng.uniform(cfg.label_low, cfg.label_high, size=n).astype(np.float32)
    scale = max(abs(cfg.label_low), abs(cfg.label_high))

    audio = _gen_audio(cfg, rng, y, scale)
    video = _gen_video(cfg, rng, y, scale)
    text = _gen_text(cfg, rng, y, scale)

    return ModalityBatch(
        audio=audio,
        video=video,
        text=text,
        labels=y,
        presence=complete_presence(n),
        ids=[f"s{i:05d}" for i in range(n)],
    )


def _gen_audio(cfg, rng, y, scale) -> np.ndarray:
    n, t, d = cfg.n, cfg.t_audio, cfg.d_audio
    jitter = _JITTER_SCALE * cfg.noise_audio
    slow_cycles = max(1, t // 32)     # inside the level-3 approximation band
    mid_cycles = max(slow_cycles + 2, (3 * t) // 16)  # inside the d2 band
    time = np.arange(t, dtype=np.float64)
    phases = 2.0 * np.pi * np.arange(d, dtype=np.float64) / d
    slow_wave = np.sin(2.0 * np.pi * slow_cycles * time[:, None] / t + phases)
    mid_wave = np.sin(2.0 * np.pi * mid_cycles * time[:, None] / t + phases + 0.7)
    # channel-structured DC term (also inside the coarse band) keeps part of
    # the slow component visible to plain token pooling
    dc_profile = np.cos(np.pi * np.arange(d, dtype=np.float64) / d)
    amp_slow = y / scale + rng.normal(0.0, jitter, size=n).astype(np.float32)
    amp_mid = np.abs(y) / scale + rng.normal(0.0, jitter, size=n).astype(np.float32)
    x = (
        amp_slow[:, None, None] * (slow_wave[None] + 0.7 * dc_profile[None, None, :])
        + amp_mid[:, None, None] * mid_wave[None]
        + rng.normal(0.0, cfg.noise_audio, size=(n, t, d))
    )
    return x.astype(np.float32)


def _gen_video(cfg, rng, y, scale) -> np.ndarray:
    n, t, d = cfg.n, cfg.t_video, cfg.d_video
    jitter = _JITTER_SCALE * cfg.noise_video
    # two low-band modes: one varying over time, one constant in time so the
    # pattern survives plain token pooling
    pattern = (
        np.outer(dct_matrix(t)[1], dct_matrix(d)[1])
        + np.outer(dct_matrix(t)[0], dct_matrix(d)[1])
    ).astype(np.float64)
    amp = (y / scale + rng.normal(0.0, jitter, size=n)) * _VIDEO_PATTERN_GAIN

    # Band-shaped noise: full strength above the radial split, a reduced
    # floor below it, synthesized in the DCT domain.
    grid = radial_frequency_grid(t, d).astype(np.float64)
    gain = np.where(grid >= _VIDEO_BAND_SPLIT, 1.0, _VIDEO_LOW_BAND_FLOOR)
    gain /= np.sqrt(np.mean(gain**2))
    coeff_noise = rng.normal(0.0, 1.0, size=(n, t, d)) * gain
    ct, cd = dct_matrix(t).astype(np.float64), dct_matrix(d).astype(np.float64)
    noise = np.einsum("it,ntd,jd->nij", ct.T, coeff_noise, cd.T, optimize=True)

    x = amp[:, None, None] * pattern[None] + cfg.noise_video * noise
    return x.astype(np.float32)


def _gen_text(cfg, rng, y, scale) -> np.ndarray:
    n, t, vocab = cfg.n, cfg.t_text, cfg.vocab
    if vocab < 17:
        raise InputError(f"text vocab must cover the sentiment token ranges, got {vocab}")
    p_pos = (0.25 * (1.0 + y / scale))[:, None]
    p_neg = (0.25 * (1.0 - y / scale))[:, None]
    u = rng.random(size=(n, t))
    pick = rng.random(size=(n, t))
    pos_ids = (pick * 8).astype(np.int64)
    neg_ids = 8 + (pick * 8).astype(np.int64)
    other_ids = 16 + (pick * (vocab - 16)).astype(np.int64)
    tokens = np.where(u < p_pos, pos_ids, np.where(u < p_pos + p_neg, neg_ids, other_ids))
    replace = rng.random(size=(n, t)) < min(1.0, cfg.noise_text) * _TEXT_REPLACE_RATE
    random_ids = rng.integers(0, vocab, size=(n, t))
    tokens = np.where(replace, random_ids, tokens)
    return tokens.astype(np.int32)


# ---------------------------------------------------------------------------
# splits and the ridge oracle
# ---------------------------------------------------------------------------

def dataset_splits(batch: ModalityBatch, cfg: DataConfig) -> Tuple[ModalityBatch, ModalityBatch, ModalityBatch]:
    """Deterministic contiguous train/val/test split (samples are i.i.d.)."""
    n = len(batch)
    n_train = int(round(cfg.train_frac * n))
    n_val = int(round(cfg.val_frac * n))
    train = batch.subset(np.arange(0, n_train))
    val = batch.subset(np.arange(n_train, n_train + n_val))
    test = batch.subset(np.arange(n_train + n_val, n))
    return train, val, test


def flatten_features(batch: ModalityBatch, vocab: int) -> np.ndarray:
    """Flattened raw features for the linear oracle: audio and video flattened,
    text as a normalized token histogram (ids are categorical, not metric)."""
    n = len(batch)
    parts = [
        batch.audio.reshape(n, -1).astype(np.float64),
        batch.video.reshape(n, -1).astype(np.float64),
    ]
    if batch.text_is_tokens:
        hist = np.zeros((n, vocab), dtype=np.float64)
        for i in range(n):
            np.add.at(hist[i], batch.text[i], 1.0)
        hist /= batch.text.shape[1]
        parts.append(hist)
    else:
        parts.append(batch.text.reshape(n, -1).astype(np.float64))
    return np.concatenate(parts, axis=1)


def ridge_oracle(train: ModalityBatch, test: ModalityBatch, vocab: int, lam: float = 3.0) -> float:
    """Closed-form ridge regression on flattened true features; returns the
    test Pearson correlation. Used as the learnability reference C*."""
    xtr = flatten_features(train, vocab)
    xte = flatten_features(test, vocab)
    mean = xtr.mean(axis=0)
    std = xtr.std(axis=0)
    std[std < 1e-9] = 1.0
    xtr = (xtr - mean) / std
    xte = (xte - mean) / std
    ytr = train.labels.astype(np.float64)
    w = np.linalg.solve(xtr.T @ xtr + lam * np.eye(xtr.shape[1]), xtr.T @ (ytr - ytr.mean()))
    pred = xte @ w + ytr.mean()
    return pearson(pred, test.labels)


# ---------------------------------------------------------------------------
# on-disk datasets: JSON-lines manifest + tensor containers
# ---------------------------------------------------------------------------

def write_dataset(batch: ModalityBatch, cfg: DataConfig, out_dir) -> Path:
    out = Path(out_dir)
    samples = out / "samples"
    samples.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, sid in enumerate(batch.ids):
        audio_path = f"samples/{sid}_audio.dctc"
        video_path = f"samples/{sid}_video.dctc"
        write_container(out / audio_path, {"audio": batch.audio[i]})
        write_container(out / video_path, {"video": batch.video[i]})
        record = {
            "id": sid,
            "label": float(batch.labels[i]),
            "audio": audio_path,
            "video": video_path,
            "text": [int(t) for t in batch.text[i]] if batch.text_is_tokens
            else f"samples/{sid}_text.dctc",
        }
        if not batch.text_is_tokens:
            write_container(out / record["text"], {"text": batch.text[i]})
        lines.append(json.dumps(record))
    (out / "manifest.jsonl").write_text("\n".join(lines) + "\n")
    (out / "data_config.json").write_text(
        json.dumps({k: getattr(cfg, k) for k in cfg.__dataclass_fields__}, indent=2) + "\n"
    )
    return out / "manifest.jsonl"


def load_dataset(dir_path) -> Tuple[ModalityBatch, DataConfig]:
    root = Path(dir_path)
    cfg_path = root / "data_config.json"
    if not cfg_path.exists():
        raise FormatError(f"missing data_config.json in {root}")
    cfg = DataConfig(**json.loads(cfg_path.read_text()))
    audio, video, text, labels, ids = [], [], [], [], []
    with (root / "manifest.jsonl").open() as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            label = float(rec["label"])
            if not (cfg.label_low <= label <= cfg.label_high):
                raise FormatError(
                    f"label {label} for sample {rec['id']} outside "
                    f"[{cfg.label_low}, {cfg.label_high}]"
                )
            audio.append(read_container(root / rec["audio"])["audio"])
            video.append(read_container(root / rec["video"])["video"])
            if isinstance(rec["text"], list):
                text.append(np.asarray(rec["text"], dtype=np.int32))
            else:
                text.append(read_container(root / rec["text"])["text"])
            labels.append(label)
            ids.append(rec["id"])
    batch = ModalityBatch(
        audio=np.stack(audio),
        video=np.stack(video),
        text=np.stack(text),
        labels=np.asarray(labels, dtype=np.float32),
        presence=complete_presence(len(ids)),
        ids=ids,
    )
    return batch, cfg
