"""Evaluation harness: missing-rate simulation under zero- and noise-masking
protocols, metric sweeps over (mr, T, protocol, modality subset, seed),
energy-error correlation with selective prediction, and the frequency-vs-
time masking variance experiment.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .batch import MODALITIES, MODALITY_INDEX, ModalityBatch
from .config import EvalConfig, ReconConfig
from .errors import ConfigError
from .frequency import dct_matrix
from .metrics import MetricReport, acc2_f1, metric_report, spearman_with_pvalue, pearson
from .model import DcerModel
from .train import sample_missing_mask

PROTOCOL_NOISE_STD = 1.0


def apply_missing(
    batch: ModalityBatch,
    mr: float,
    protocol: str,
    seed: int,
    subset: str = "avt",
) -> ModalityBatch:
    """Drop each sample-modality pair independently with probability `mr`
    (restoring one uniformly-chosen modality when all three drop), replace
    dropped raw features per protocol, and forward presence flags.

    The drop pattern depends only on `seed`, never on the protocol, so the
    two protocols mask identical pairs for a given seed. Modalities outside
    `subset` are always treated as missing. At mr=0 with the full subset the
    batch is returned bit-identical (a copy).
    """
    if protocol not in ("zero", "noise"):
        raise ConfigError(f"unknown masking protocol {protocol!r}")
    out = batch.copy()
    n = len(batch)
    pattern_rng = np.random.default_rng([seed, 0x9A5C])
    present = (
        sample_missing_mask(n, mr, pattern_rng)
        if mr > 0
        else np.ones((n, 3), dtype=bool)
    )
    letters = {"audio": "a", "video": "v", "text": "t"}
    for m in MODALITIES:
        if letters[m] not in subset:
            present[:, MODALITY_INDEX[m]] = False
    if not present.any(axis=1).all():
        # subset restriction may empty a sample; restore the first subset
        # modality for such rows
        first = next(m for m in MODALITIES if letters[m] in subset)
        rows = ~present.any(axis=1)
        present[rows, MODALITY_INDEX[first]] = True
    if present.all():
        out.presence = present
        return out

    noise_rng = np.random.default_rng([seed, 0x401F])
    for m in MODALITIES:
        col = MODALITY_INDEX[m]
        rows = np.flatnonzero(~present[:, col])
        if not rows.size:
            continue
        if m == "text" and out.text_is_tokens:
            # token ids are categorical: the zero protocol writes token 0,
            # the noise protocol draws uniform ids
            if protocol == "zero":
                out.text[rows] = 0
            else:
                out.text[rows] = noise_rng.integers(
                    0, int(out.text.max()) + 1, size=out.text[rows].shape
                )
            continue
        target = getattr(out, "text" if m == "text" else m)
        if protocol == "zero":
            target[rows] = 0.0
        else:
            target[rows] = noise_rng.normal(
                0.0, PROTOCOL_NOISE_STD, size=target[rows].shape
            ).astype(np.float32)
    out.presence = present
    return out


def evaluate_cell(
    model: DcerModel,
    batch: ModalityBatch,
    mr: float,
    steps: int,
    protocol: str,
    subset: str,
    seed: int,
    recon: ReconConfig,
    label_range,
) -> MetricReport:
    """One sweep cell: mask, fill, report."""
    masked = apply_missing(batch, mr, protocol, seed, subset)
    cell_recon = ReconConfig(
        steps=steps, eta=recon.eta, rho=recon.rho, sigma=recon.sigma
    )
    rng = np.random.default_rng([seed, 0xE7A1]) if cell_recon.sigma > 0 else None
    result = model.fill_missing(masked, cell_recon, rng=rng)
    rep = metric_report(
        result.predictions,
        masked.labels,
        label_range,
        mr=mr,
        protocol=protocol,
        subset=subset,
        steps=steps,
        seed=seed,
    )
    rep.extras["mean_uncertainty"] = float(result.uncertainty.mean())
    return rep


def sweep(
    models,
    batch: ModalityBatch,
    eval_cfg: EvalConfig,
    recon: ReconConfig,
    label_range=(-3.0, 3.0),
    out_csv=None,
) -> List[MetricReport]:
    """Cartesian evaluation over (mr, T, protocol, subset) x seed replicas.

    `models` is either a single model (evaluated under each seed's mask
    pattern) or a dict seed -> model for seed-replicated training.
    """
    if isinstance(models, DcerModel):
        model_for = {s: models for s in range(eval_cfg.replicates)}
    else:
        model_for = dict(models)
    reports = []
    for seed in sorted(model_for):
        model = model_for[seed]
        for mr in eval_cfg.mrs:
            for steps in eval_cfg.steps:
                for protocol in eval_cfg.protocols:
                    for subset in eval_cfg.subsets:
                        reports.append(
                            evaluate_cell(
                                model, batch, mr, steps, protocol, subset,
                                seed, recon, label_range,
                            )
                        )
    if out_csv is not None:
        write_sweep_csv(out_csv, reports)
    return reports


def write_sweep_csv(path, reports: Iterable[MetricReport]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(MetricReport.CSV_COLUMNS + "\n")
        for rep in reports:
            fh.write(rep.csv_row() + "\n")


@dataclass
class UncertaintyReport:
    spearman_rho: float
    spearman_pvalue: float
    pearson_rho: float
    acc_high_energy_quintile: float
    acc_low_energy_quintile: float
    acc2_all: float
    acc2_keep: float
    acc_delta_at_reject_20pct: float
    n: int


def uncertainty_report(
    model: DcerModel,
    batch: ModalityBatch,
    mr: float,
    seed: int,
    recon: ReconConfig,
    reject_fraction: float = 0.2,
) -> UncertaintyReport:
    """Energy-vs-error correlation and selective prediction at one missing
    rate. Pairs are collected over samples with at least one missing
    modality; rejection removes the highest-energy fraction."""
    masked = apply_missing(batch, mr, "zero", seed)
    rng = np.random.default_rng([seed, 0xE7A1]) if recon.sigma > 0 else None
    result = model.fill_missing(masked, recon, rng=rng)
    miss = result.n_missing > 0
    energies = result.uncertainty[miss]
    preds = result.predictions[miss]
    labels = masked.labels[miss]
    errors = np.abs(preds - labels)

    rho, pval = spearman_with_pvalue(energies, errors)
    order = np.argsort(-energies, kind="stable")
    n = len(energies)
    cut = int(round(reject_fraction * n))
    high = order[:cut]
    keep = order[cut:]
    acc_all, _ = acc2_f1(preds, labels)
    acc_keep, _ = acc2_f1(preds[keep], labels[keep])
    acc_high, _ = acc2_f1(preds[high], labels[high]) if cut else (float("nan"), 0.0)
    quint = max(1, int(round(0.2 * n)))
    low = np.argsort(energies, kind="stable")[:quint]
    acc_low, _ = acc2_f1(preds[low], labels[low])
    return UncertaintyReport(
        spearman_rho=rho,
        spearman_pvalue=pval,
        pearson_rho=pearson(energies, errors),
        acc_high_energy_quintile=acc_high,
        acc_low_energy_quintile=acc_low,
        acc2_all=acc_all,
        acc2_keep=acc_keep,
        acc_delta_at_reject_20pct=acc_keep - acc_all,
        n=n,
    )


# ---------------------------------------------------------------------------
# frequency- vs time-domain masking variance
# ---------------------------------------------------------------------------

def _band_pulse_signal(rng: np.random.Generator, length: int = 64):
    """A two-band test signal: a time-localized mid-band pulse (the target)
    plus a slow distractor component. Returns (signal, target band)."""
    t = np.arange(length, dtype=np.float64)
    center = rng.uniform(0.15, 0.85) * length
    width = 2.5
    envelope = np.exp(-0.5 * ((t - center) / width) ** 2)
    f0 = rng.uniform(0.2, 0.3)
    pulse = envelope * np.cos(2.0 * np.pi * f0 * (t - center))
    slow = 0.8 * np.cos(2.0 * np.pi * rng.uniform(0.01, 0.03) * t + rng.uniform(0, 6.28))
    band = (int(2 * 0.13 * length), int(2 * 0.38 * length))  # DCT bins of the pulse band
    return pulse + slow, band


def eq9_experiment(
    r: float,
    trials: int,
    seed: int = 0,
    length: int = 64,
    signal_fn=None,
):
    """Mask a fraction r of time steps versus a fraction r of DCT
    coefficients and record the retained fraction of the target band energy;
    returns (var_time, var_freq) across trials.

    The target statistic is the energy in a fixed mid-frequency band carried
    by a time-localized pulse: time masking can delete the whole pulse while
    frequency masking removes band coefficients evenly, so the retained
    fraction varies less under frequency-domain masking.
    """
    if not (0.0 <= r <= 1.0):
        raise ConfigError(f"masking rate must be in [0,1], got {r}")
    rng = np.random.default_rng([seed, 0xE99])
    dct = dct_matrix(length).astype(np.float64)
    make = signal_fn or _band_pulse_signal
    kept_time = np.empty(trials)
    kept_freq = np.empty(trials)
    n_mask = int(round(r * length))
    for i in range(trials):
        x, (k1, k2) = make(rng)
        coeffs = dct @ x
        band_energy = float((coeffs[k1:k2] ** 2).sum())
        if band_energy <= 0:
            kept_time[i] = kept_freq[i] = 0.0
            continue

        tmask = np.ones(length)
        tmask[rng.permutation(length)[:n_mask]] = 0.0
        ct = dct @ (x * tmask)
        kept_time[i] = float((ct[k1:k2] ** 2).sum()) / band_energy

        fmask = np.ones(length)
        fmask[rng.permutation(length)[:n_mask]] = 0.0
        kept_freq[i] = float(((coeffs * fmask)[k1:k2] ** 2).sum()) / band_energy
    return float(kept_time.var()), float(kept_freq.var())
