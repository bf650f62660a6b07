"""Frequency-domain primitives: learnable wavelet analysis, orthonormal 2D
DCT, and the soft radial band partition with ordered learnable boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import List

import numpy as np

from . import tensor as T
from .errors import InputError
from .nn import Module
from .tensor import Tensor, param

# Daubechies 8-tap orthonormal analysis low-pass (4 vanishing moments).
# Derived from the standard orthonormality + vanishing-moment constraints;
# verified at init by the filter invariants below.
DB4_LOW = np.array(
    [
        0.23037781330885523,
        0.71484657055254153,
        0.63088076792959036,
        -0.02798376941698385,
        -0.18703481171888114,
        0.03084138183598697,
        0.03288301166698295,
        -0.01059740178499728,
    ],
    dtype=np.float64,
)


def quadrature_mirror(low: np.ndarray) -> np.ndarray:
    """g[n] = (-1)^n * h[L-1-n]."""
    taps = len(low)
    signs = np.where(np.arange(taps) % 2 == 0, 1.0, -1.0)
    return signs * low[::-1]


class WaveletFilter(Module):
    """A learnable analysis filter pair, initialized to Daubechies-4.

    The high-pass starts as the quadrature mirror of the low-pass and is an
    independent parameter afterwards; orthonormality is an init-time property
    only.
    """

    def __init__(self):
        super().__init__()
        self.low = param(DB4_LOW.astype(np.float32))
        self.high = param(quadrature_mirror(DB4_LOW).astype(np.float32))


@dataclass
class WaveletPyramid:
    """Multi-level analysis output: coarse approximation plus detail
    sequences ordered coarsest-first (levels L..1)."""

    approx: Tensor
    details: List[Tensor]

    @property
    def levels(self) -> int:
        return len(self.details)

    def sequences(self) -> List[Tensor]:
        return [self.approx] + list(self.details)

    def lengths(self) -> List[int]:
        return [s.shape[-2] for s in self.sequences()]


def _pad_even(x: Tensor) -> Tensor:
    """Edge-replicate the last time frame when the length is odd."""
    t = x.shape[-2]
    if t % 2 == 0:
        return x
    last = T.narrow(x, x.ndim - 2, t - 1, 1)
    return T.concat([x, last], axis=x.ndim - 2)


def dwt_level(x: Tensor, filt: WaveletFilter):
    """One analysis level along the time axis (periodic boundary).

    x: (..., T, C) with T >= 8 (after evening); returns (approx, detail),
    each (..., T/2, C). Differentiable w.r.t. the signal and both filters.
    """
    x = _pad_even(x)
    t = x.shape[-2]
    if t < 8:
        raise InputError(f"dwt_level needs at least 8 time steps, got {t}")
    approx = T.periodic_conv_down(x, filt.low)
    detail = T.periodic_conv_down(x, filt.high)
    return approx, detail


def idwt_level(approx: Tensor, detail: Tensor, filt: WaveletFilter, out_len: int) -> Tensor:
    """Inverse of `dwt_level` for orthonormal filters (the transpose)."""
    up_a = T.periodic_conv_up(approx, filt.low, out_len)
    up_d = T.periodic_conv_up(detail, filt.high, out_len)
    return T.add(up_a, up_d)


def dwt_multi(x: Tensor, filt: WaveletFilter, levels: int = 3) -> WaveletPyramid:
    """Recursive analysis on the approximation branch, `levels` deep.

    The input is edge-replicated up to a multiple of 2^levels first so each
    level halves exactly.
    """
    t = x.shape[-2]
    if t < 2**levels:
        raise InputError(f"dwt_multi needs at least {2 ** levels} steps, got {t}")
    block = 2**levels
    if t % block:
        pad = block - t % block
        last = T.narrow(x, x.ndim - 2, t - 1, 1)
        x = T.concat([x] + [last] * pad, axis=x.ndim - 2)
    details = []
    current = x
    for _ in range(levels):
        current, d = dwt_level(current, filt)
        details.append(d)
    return WaveletPyramid(approx=current, details=list(reversed(details)))


def idwt_multi(p: WaveletPyramid, filt: WaveletFilter) -> Tensor:
    """Inverse multi-level transform (exact for frozen orthonormal filters)."""
    current = p.approx
    for d in p.details:
        current = idwt_level(current, d, filt, 2 * current.shape[-2])
    return current


@lru_cache(maxsize=None)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal type-II DCT matrix (float32), C @ C.T = I."""
    k = np.arange(n, dtype=np.float64)[:, None]
    t = np.arange(n, dtype=np.float64)[None, :]
    c = np.cos(np.pi * (2.0 * t + 1.0) * k / (2.0 * n))
    c[0] *= np.sqrt(1.0 / n)
    c[1:] *= np.sqrt(2.0 / n)
    return c.astype(np.float32)


def dct2(x: Tensor) -> Tensor:
    """Orthonormal 2D DCT over the trailing two axes."""
    rows, cols = x.shape[-2], x.shape[-1]
    cr = Tensor(dct_matrix(rows))
    cc = Tensor(dct_matrix(cols))
    return T.matmul(T.matmul(cr, x), T.transpose(cc))


def idct2(c: Tensor) -> Tensor:
    """Exact inverse of `dct2`."""
    rows, cols = c.shape[-2], c.shape[-1]
    cr = Tensor(dct_matrix(rows))
    cc = Tensor(dct_matrix(cols))
    return T.matmul(T.matmul(T.transpose(cr), c), cc)


def radial_frequency_grid(rows: int, cols: int) -> np.ndarray:
    """Normalized radial frequency r(i,j) = sqrt((i/rows)^2 + (j/cols)^2) / sqrt(2)."""
    i = (np.arange(rows, dtype=np.float64) / rows)[:, None]
    j = (np.arange(cols, dtype=np.float64) / cols)[None, :]
    return (np.sqrt(i * i + j * j) / np.sqrt(2.0)).astype(np.float32)


class BandBoundaries(Module):
    """Three ordered boundaries in (0,1) via normalized cumulative softplus.

    b_k = (sum_{j<=k} softplus(u_j)) / (sum_j softplus(u_j)) for k=1..3 with
    four raw increments, so 0 < b1 < b2 < b3 < 1 holds for any raw values.
    """

    def __init__(self, init=(0.25, 0.5, 0.75)):
        super().__init__()
        edges = np.concatenate([[0.0], np.asarray(init, dtype=np.float64), [1.0]])
        gaps = np.diff(edges)
        if np.any(gaps <= 0):
            raise InputError(f"band boundaries must be strictly increasing in (0,1): {init}")
        # softplus^{-1}, scaled so the normalized cumulative sums hit `init`
        raw = np.log(np.expm1(gaps))
        self.raw = param(raw.astype(np.float32), no_decay=True)

    def boundaries(self) -> Tensor:
        inc = T.softplus(self.raw)
        s1 = T.narrow(inc, 0, 0, 1)
        s2 = T.add(s1, T.narrow(inc, 0, 1, 1))
        s3 = T.add(s2, T.narrow(inc, 0, 2, 1))
        s4 = T.add(s3, T.narrow(inc, 0, 3, 1))
        return T.div(T.concat([s1, s2, s3], axis=0), s4)


def band_masks(boundaries: Tensor, grid: np.ndarray, tau: float = 0.05) -> List[Tensor]:
    """Four soft masks over the coefficient grid, a partition of unity.

    mask_k = sigmoid((r - b_{k-1})/tau) - sigmoid((r - b_k)/tau) with
    b_0 = -inf and b_4 = +inf; the telescoping sum is exactly 1 everywhere.
    """
    g = Tensor(grid)
    inv_tau = float(1.0 / tau)
    sigs = []
    for k in range(3):
        b_k = T.narrow(boundaries, 0, k, 1)
        sigs.append(T.sigmoid(T.mul(T.sub(g, b_k), inv_tau)))
    one = Tensor(np.ones_like(grid))
    masks = [T.sub(one, sigs[0])]
    masks.append(T.sub(sigs[0], sigs[1]))
    masks.append(T.sub(sigs[1], sigs[2]))
    masks.append(sigs[2])
    return masks
