"""Stage-2 cross-modality bottleneck: learnable query tokens attend over the
concatenated modality encodings through a stack of fusion layers; an MLP
head reads the bottleneck state only.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .errors import ContractError
from .nn import (
    Linear,
    MLP,
    Module,
    MultiHeadAttention,
    LayerNorm,
    key_mask_bias,
    merge_heads,
    scaled_attention,
    split_heads,
)
from .tensor import Tensor, param


class BottleneckAttention(Module):
    """Multi-head bottleneck read: raw query tokens score the modality tokens
    per head (scaled dot product over the head slice), the per-head convex
    combinations of the tokens are concatenated and sent through one output
    projection. No query/key/value projections.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        assert dim % heads == 0
        self.heads = heads
        self.wo = Linear(dim, dim, rng)
        self.last_probs = None

    def __call__(self, q: Tensor, h: Tensor) -> Tensor:
        if h.shape[-2] == 0:
            raise ContractError("bottleneck attention over an empty token sequence")
        if q.ndim == 2:
            k, d = q.shape
            q = T.broadcast_to(T.reshape(q, (1, k, d)), (h.shape[0], k, d))
        qh = split_heads(q, self.heads)
        kh = split_heads(h, self.heads)
        ctx, probs = scaled_attention(qh, kh, kh)
        self.last_probs = probs.data
        return self.wo(merge_heads(ctx))


class FusionLayer(Module):
    """Pre-norm sublayers: cross-attention to the modality tokens, then
    self-attention over the bottleneck tokens, then the FFN, each residual.

    Residual-branch output projections are scaled down at init (GPT-2
    style) so the stack starts close to identity and trains stably.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 ffn_mult: int = 4, out_scale: float = 1.0):
        super().__init__()
        self.ln_cross = LayerNorm(dim)
        self.cross = MultiHeadAttention(dim, heads, rng)
        self.ln_self = LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads, rng)
        self.ln_ffn = LayerNorm(dim)
        self.ffn_l1 = Linear(dim, dim * ffn_mult, rng)
        self.ffn_l2 = Linear(dim * ffn_mult, dim, rng)
        # the cross-attention branch is the only inlet from the modality
        # tokens, so it keeps full scale; the within-bottleneck branches
        # start small
        for w in (self.self_attn.wo.w, self.ffn_l2.w):
            w.data = (w.data * np.float32(out_scale))

    def __call__(self, z: Tensor, h: Tensor, bias: Tensor = None) -> Tensor:
        z = T.add(z, self.cross(self.ln_cross(z), h, bias))
        zn = self.ln_self(z)
        z = T.add(z, self.self_attn(zn, zn))
        z = T.add(z, self.ffn_l2(T.gelu(self.ffn_l1(self.ln_ffn(z)))))
        return z


class BottleneckFusion(Module):
    """K learnable queries refined by `fusion_layers` layers against H."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.n_layers = cfg.fusion_layers
        self.queries = param(
            rng.normal(0.0, 0.1, size=(cfg.queries, cfg.hidden)).astype(np.float32),
            no_decay=True,
        )
        scale = float(1.0 / np.sqrt(max(1, 3 * cfg.fusion_layers)))
        for i in range(cfg.fusion_layers):
            setattr(
                self,
                f"layer{i}",
                FusionLayer(cfg.hidden, cfg.heads, rng, cfg.ffn_mult, out_scale=scale),
            )

    def __call__(self, h: Tensor, key_mask: np.ndarray = None) -> Tensor:
        """`key_mask` (B, T) bool marks live tokens; absent tokens receive
        exactly zero attention in every cross-attention sublayer."""
        if h.shape[-2] == 0:
            raise ContractError("fusion requires a non-empty token sequence")
        if key_mask is not None and not key_mask.any(axis=1).all():
            raise ContractError("fusion requires at least one live token per sample")
        b = h.shape[0]
        k, d = self.queries.shape
        z = T.broadcast_to(T.reshape(self.queries, (1, k, d)), (b, k, d))
        bias = None if key_mask is None else key_mask_bias(key_mask)
        for i in range(self.n_layers):
            z = getattr(self, f"layer{i}")(z, h, bias)
        return z


class PredictionHead(Module):
    """Normalized, flattened bottleneck tokens -> hidden GELU layer -> scalar."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.ln = LayerNorm(cfg.hidden)
        self.net = MLP([cfg.queries * cfg.hidden, cfg.hidden, 1], rng)

    def __call__(self, z: Tensor) -> Tensor:
        b, k, d = z.shape
        flat = T.reshape(self.ln(z), (b, k * d))
        return T.reshape(self.net(flat), (b,))
