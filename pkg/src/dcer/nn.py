"""Parameter containers and the standard blocks of the architecture.

Modules register parameters and submodules through attribute assignment so
checkpoints can address every tensor by a stable dotted name (for example
``fusion.layer0.cross.wq.w``).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor, param


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, mod in self._modules.items():
            yield from mod.named_parameters(prefix + name + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None):
    limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
    shape = shape if shape is not None else (fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.w = param(xavier_uniform(rng, d_in, d_out))
        self.b = param(np.zeros(d_out, dtype=np.float32)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.w, self.b)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gain = param(np.ones(dim, dtype=np.float32), no_decay=True)
        self.bias = param(np.zeros(dim, dtype=np.float32), no_decay=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)


class Embedding(Module):
    def __init__(self, vocab: int, dim: int, rng: np.random.Generator, scale: float = 0.1):
        super().__init__()
        self.table = param(rng.normal(0.0, scale, size=(vocab, dim)).astype(np.float32),
                           no_decay=True)

    def __call__(self, ids: np.ndarray) -> Tensor:
        return T.embedding(self.table, ids)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(B, T, D) -> (B, heads, T, D/heads)."""
    b, t, d = x.shape
    x = T.reshape(x, (b, t, heads, d // heads))
    return T.transpose(x, (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    """(B, heads, T, dh) -> (B, T, heads*dh)."""
    b, h, t, dh = x.shape
    x = T.transpose(x, (0, 2, 1, 3))
    return T.reshape(x, (b, t, h * dh))


def key_mask_bias(mask: np.ndarray) -> Tensor:
    """Additive attention bias from a boolean key mask (B, Tk): masked keys
    get a large negative score, which underflows to exactly zero probability
    after the max-subtracted softmax."""
    bias = np.where(mask, 0.0, -1e9).astype(np.float32)
    return Tensor(bias[:, None, None, :])


def scaled_attention(q: Tensor, k: Tensor, v: Tensor, bias: Tensor = None):
    """Softmax attention over the last key axis; returns (context, probs)."""
    dh = q.shape[-1]
    scores = T.mul(T.matmul(q, T.swap_last(k)), float(1.0 / np.sqrt(dh)))
    if bias is not None:
        scores = T.add(scores, bias)
    probs = T.softmax(scores, axis=-1)
    return T.matmul(probs, v), probs


class MultiHeadAttention(Module):
    """Standard multi-head attention with learned q/k/v/output projections.

    Queries may come from a different sequence than keys/values (cross
    attention); an optional additive key bias excludes absent tokens. The
    most recent attention probabilities are kept on `last_probs` for
    inspection.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        assert dim % heads == 0
        self.heads = heads
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)
        self.last_probs = None

    def __call__(self, q_in: Tensor, kv_in: Tensor, bias: Tensor = None) -> Tensor:
        q = split_heads(self.wq(q_in), self.heads)
        k = split_heads(self.wk(kv_in), self.heads)
        v = split_heads(self.wv(kv_in), self.heads)
        ctx, probs = scaled_attention(q, k, v, bias)
        self.last_probs = probs.data
        return self.wo(merge_heads(ctx))


class FeedForward(Module):
    def __init__(self, dim: int, rng: np.random.Generator, mult: int = 4):
        super().__init__()
        self.l1 = Linear(dim, dim * mult, rng)
        self.l2 = Linear(dim * mult, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.l2(T.gelu(self.l1(x)))


class TransformerBlock(Module):
    """Pre-norm self-attention block: x + Attn(LN(x)), then x + FFN(LN(x)).

    Residual-branch output projections start scaled down so the block is
    near-identity at init.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 ffn_mult: int = 4, out_scale: float = 0.5):
        super().__init__()
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.ln2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, rng, ffn_mult)
        for w in (self.attn.wo.w, self.ffn.l2.w):
            w.data = (w.data * np.float32(out_scale))

    def __call__(self, x: Tensor) -> Tensor:
        normed = self.ln1(x)
        x = T.add(x, self.attn(normed, normed))
        x = T.add(x, self.ffn(self.ln2(x)))
        return x


class MLP(Module):
    """GELU MLP over the last axis, sizes[0] -> ... -> sizes[-1]."""

    def __init__(self, sizes, rng: np.random.Generator):
        super().__init__()
        self.depth = len(sizes) - 1
        for i in range(self.depth):
            setattr(self, f"l{i}", Linear(sizes[i], sizes[i + 1], rng))

    def __call__(self, x: Tensor) -> Tensor:
        for i in range(self.depth):
            x = getattr(self, f"l{i}")(x)
            if i < self.depth - 1:
                x = T.gelu(x)
        return x


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """Fixed sin/cos position table of shape (length, dim)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim // 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / dim)
    table = np.zeros((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table.astype(np.float32)
