"""Stage-1 within-modality encoders.

Audio: learnable 3-level wavelet pyramid, per-scale projection with scale
tags, one self-attention block, output projection. Video: orthonormal 2D
DCT split into four soft radial bands, band-limited maps projected and
tagged, one self-attention block, output projection. Text: learned token
embeddings (or ingestion of precomputed embedding tensors) with sinusoidal
positions, one self-attention block, output projection.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .errors import InputError
from .frequency import (
    BandBoundaries,
    WaveletFilter,
    band_masks,
    dct2,
    dwt_multi,
    idct2,
    radial_frequency_grid,
)
from .nn import Embedding, Linear, Module, TransformerBlock, sinusoidal_positions
from .tensor import Tensor, param


class AudioEncoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.levels = cfg.wavelet_levels
        self.filt = WaveletFilter()
        scales = self.levels + 1
        for s in range(scales):
            setattr(self, f"scale_proj{s}", Linear(cfg.audio_dim, cfg.hidden, rng))
        self.scale_embed = param(
            rng.normal(0.0, 0.1, size=(scales, cfg.hidden)).astype(np.float32),
            no_decay=True,
        )
        self.block = TransformerBlock(cfg.hidden, cfg.heads, rng, cfg.ffn_mult)
        self.out_proj = Linear(cfg.hidden, cfg.hidden, rng)

    def tagged_tokens(self, x: Tensor) -> Tensor:
        """Project each pyramid scale to the hidden size and add its scale tag.

        Scales are ordered coarsest-first (approximation, then details from
        level L down to 1) and concatenated along time.
        """
        pyramid = dwt_multi(x, self.filt, self.levels)
        tagged = []
        for s, seq in enumerate(pyramid.sequences()):
            proj = getattr(self, f"scale_proj{s}")(seq)
            tag = T.narrow(self.scale_embed, 0, s, 1)
            tagged.append(T.add(proj, tag))
        return T.concat(tagged, axis=x.ndim - 2)

    def __call__(self, x: Tensor) -> Tensor:
        tokens = self.tagged_tokens(x)
        return self.out_proj(self.block(tokens))


class VideoEncoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.tau = cfg.band_tau
        self.boundaries = BandBoundaries()
        self.grid = radial_frequency_grid(cfg.video_len, cfg.video_dim)
        for b in range(4):
            setattr(self, f"band_proj{b}", Linear(cfg.video_dim, cfg.hidden, rng))
        self.band_embed = param(
            rng.normal(0.0, 0.1, size=(4, cfg.hidden)).astype(np.float32),
            no_decay=True,
        )
        self.block = TransformerBlock(cfg.hidden, cfg.heads, rng, cfg.ffn_mult)
        self.out_proj = Linear(cfg.hidden, cfg.hidden, rng)

    def band_tokens(self, x: Tensor) -> Tensor:
        """Four band-limited feature maps, each projected per time step and
        tagged, concatenated into a 4*T_v token sequence."""
        coeff = dct2(x)
        masks = band_masks(self.boundaries.boundaries(), self.grid, self.tau)
        tokens = []
        for b, mask in enumerate(masks):
            limited = idct2(T.mul(coeff, mask))
            proj = getattr(self, f"band_proj{b}")(limited)
            tag = T.narrow(self.band_embed, 0, b, 1)
            tokens.append(T.add(proj, tag))
        return T.concat(tokens, axis=x.ndim - 2)

    def __call__(self, x: Tensor) -> Tensor:
        return self.out_proj(self.block(self.band_tokens(x)))


class TextEncoder(Module):
    """Desk-scale text path: a learned embedding table stands in for a large
    pretrained encoder; precomputed embedding tensors (e.g. 768-dim) can be
    ingested through `from_embeddings` instead."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.vocab = cfg.text_vocab
        self.embed = Embedding(cfg.text_vocab, cfg.hidden, rng)
        self.in_proj = Linear(cfg.text_embed_dim, cfg.hidden, rng)
        self.positions = sinusoidal_positions(max(cfg.text_len, 512), cfg.hidden)
        self.block = TransformerBlock(cfg.hidden, cfg.heads, rng, cfg.ffn_mult)
        self.out_proj = Linear(cfg.hidden, cfg.hidden, rng)

    def _finish(self, x: Tensor) -> Tensor:
        t = x.shape[-2]
        x = T.add(x, Tensor(self.positions[:t]))
        return self.out_proj(self.block(x))

    def __call__(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab):
            bad = int(ids.max() if ids.max() >= self.vocab else ids.min())
            raise InputError(f"token id {bad} outside vocabulary of size {self.vocab}")
        return self._finish(self.embed(ids))

    def from_embeddings(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_proj.w.shape[0]:
            raise InputError(
                f"embedding feature dim {x.shape[-1]} does not match configured "
                f"{self.in_proj.w.shape[0]}"
            )
        return self._finish(self.in_proj(x))
