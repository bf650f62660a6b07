"""Regression and classification metrics for sentiment evaluation.

Multi-class accuracies use nearest-center binning: k centers equally spaced
over the label range, predictions clamped to the range first. For k=7 over
[-3,3] this is integer rounding with edges at the half-integers; for k=3 it
is sign-with-neutral with the neutral bin centered at zero. Binary accuracy
and F1 exclude zero labels and use the sign, with the positive class being
positive sentiment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import stats as sstats


def mae(yhat: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.abs(np.asarray(yhat, float) - np.asarray(y, float))))


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation; NaN when either input has zero variance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ac = a - a.mean()
    bc = b - b.mean()
    denom = math.sqrt(float(ac @ ac) * float(bc @ bc))
    if denom == 0.0:
        return float("nan")
    return float(ac @ bc / denom)


def rankdata(a: np.ndarray) -> np.ndarray:
    """Average ranks (ties share the mean of their positions)."""
    return sstats.rankdata(np.asarray(a, dtype=np.float64), method="average")


def spearman(a: np.ndarray, b: np.ndarray) -> float:
    """Rank correlation; NaN when either rank vector is constant."""
    return pearson(rankdata(a), rankdata(b))


def spearman_with_pvalue(a: np.ndarray, b: np.ndarray) -> Tuple[float, float]:
    """Spearman rho plus the two-sided t-approximation p-value."""
    rho = spearman(a, b)
    n = len(a)
    if math.isnan(rho) or n < 3:
        return rho, float("nan")
    if abs(rho) >= 1.0:
        return rho, 0.0
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    p = 2.0 * float(sstats.t.sf(abs(t), df=n - 2))
    return rho, p


def bin_by_nearest_center(values: np.ndarray, k: int, label_range: Tuple[float, float]) -> np.ndarray:
    """Clamp to the label range, then assign to the nearest of k centers
    equally spaced across the range."""
    lo, hi = label_range
    v = np.clip(np.asarray(values, dtype=np.float64), lo, hi)
    scaled = (v - lo) / (hi - lo) * (k - 1)
    return np.rint(scaled).astype(np.int64)


def acc_k(yhat: np.ndarray, y: np.ndarray, k: int, label_range: Tuple[float, float]) -> float:
    bh = bin_by_nearest_center(yhat, k, label_range)
    by = bin_by_nearest_center(y, k, label_range)
    return float(np.mean(bh == by))


def acc2_f1(yhat: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    """Binary accuracy and F1 on sign, excluding zero labels.

    Zero predictions count as positive; F1 is 0 when there are no true
    positives.
    """
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    keep = y != 0.0
    if not keep.any():
        return float("nan"), float("nan")
    ph = yhat[keep] >= 0.0
    py = y[keep] > 0.0
    acc = float(np.mean(ph == py))
    tp = float(np.sum(ph & py))
    fp = float(np.sum(ph & ~py))
    fn = float(np.sum(~ph & py))
    if tp == 0.0:
        return acc, 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return acc, 2.0 * precision * recall / (precision + recall)


@dataclass
class MetricReport:
    mae: float
    pearson_corr: float
    corr_defined: bool
    acc7: float
    acc5: float
    acc3: float
    acc2: float
    f1: float
    n: int
    mr: Optional[float] = None
    protocol: Optional[str] = None
    subset: Optional[str] = None
    steps: Optional[int] = None
    seed: Optional[int] = None
    extras: dict = field(default_factory=dict)

    CSV_COLUMNS = (
        "mr,steps,protocol,subset,seed,n,mae,corr,acc7,acc5,acc3,acc2,f1"
    )

    def csv_row(self) -> str:
        def fmt(x):
            if x is None:
                return ""
            if isinstance(x, float):
                return f"{x:.6f}" if math.isfinite(x) else "nan"
            return str(x)

        return ",".join(
            fmt(v)
            for v in (
                self.mr, self.steps, self.protocol, self.subset, self.seed,
                self.n, self.mae, self.pearson_corr, self.acc7, self.acc5,
                self.acc3, self.acc2, self.f1,
            )
        )


def metric_report(yhat: np.ndarray, y: np.ndarray, label_range=(-3.0, 3.0), **echo) -> MetricReport:
    corr = pearson(yhat, y)
    acc2, f1 = acc2_f1(yhat, y)
    return MetricReport(
        mae=mae(yhat, y),
        pearson_corr=corr,
        corr_defined=not math.isnan(corr),
        acc7=acc_k(yhat, y, 7, label_range),
        acc5=acc_k(yhat, y, 5, label_range),
        acc3=acc_k(yhat, y, 3, label_range),
        acc2=acc2,
        f1=f1,
        n=len(y),
        **echo,
    )
