"""A registry of finite-difference gradient checks spanning every
differentiable op, the composed blocks, the energy function, and the four
loss terms. Checks run on small shapes so the whole suite stays fast.
"""

from __future__ import annotations

from typing import Callable, Dict, List, Tuple

import numpy as np

from . import tensor as T
from .batch import ModalityBatch, complete_presence
from .config import ModelConfig, ReconConfig, TrainConfig
from .frequency import BandBoundaries, WaveletFilter, band_masks, dct2, dwt_level, radial_frequency_grid
from .losses import loss_joint, loss_pred, loss_recon
from .model import DcerModel
from .nn import MultiHeadAttention, TransformerBlock
from .tensor import GradCheckReport, Tensor, grad_check, param

CHECKS: Dict[str, Callable[[], GradCheckReport]] = {}


def register(name: str):
    def deco(fn):
        CHECKS[name] = fn
        return fn

    return deco


def _rand(rng, *shape):
    return rng.normal(size=shape).astype(np.float32)


def _weighted_sum(out: Tensor, seed: int = 7) -> Tensor:
    w = Tensor(np.random.default_rng(seed).normal(size=out.shape).astype(np.float32))
    return T.tsum(T.mul(out, w))


def _simple_op_check(op, shape=(3, 4), seed=0) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    x = param(_rand(rng, *shape))
    return grad_check(lambda t: _weighted_sum(op(t)), x)


_SIMPLE_OPS = {
    "op.add": lambda t: T.add(t, 0.7),
    "op.sub": lambda t: T.sub(1.3, t),
    "op.mul": lambda t: T.mul(t, t),
    "op.div": lambda t: T.div(1.0, T.add(T.square(t), 1.0)),
    "op.neg": T.neg,
    "op.square": T.square,
    "op.abs": T.absolute,
    "op.sigmoid": T.sigmoid,
    "op.softplus": T.softplus,
    "op.gelu": T.gelu,
    "op.softmax": lambda t: T.softmax(t, axis=1),
    "op.transpose": T.transpose,
    "op.reshape": lambda t: T.reshape(t, (6, 2)),
    "op.broadcast": lambda t: T.broadcast_to(T.reshape(t, (3, 4, 1)), (3, 4, 2)),
    "op.narrow": lambda t: T.narrow(t, 1, 1, 2),
    "op.mean": lambda t: T.tmean(t, axis=0),
    "op.sum": lambda t: T.tsum(t, axis=1, keepdims=True),
}

for _name, _op in _SIMPLE_OPS.items():
    CHECKS[_name] = (lambda op=_op: _simple_op_check(op))


@register("op.matmul")
def _check_matmul():
    rng = np.random.default_rng(1)
    b = Tensor(_rand(rng, 7, 3))
    x = param(_rand(rng, 5, 7))
    return grad_check(lambda t: _weighted_sum(T.matmul(t, b)), x)


@register("op.linear")
def _check_linear():
    rng = np.random.default_rng(2)
    x = Tensor(_rand(rng, 2, 5, 4))
    w = param(_rand(rng, 4, 3))
    b = Tensor(_rand(rng, 3))
    return grad_check(lambda t: _weighted_sum(T.linear(x, t, b)), w)


@register("op.layer_norm")
def _check_layer_norm():
    rng = np.random.default_rng(3)
    x = param(_rand(rng, 2, 6))
    gain = Tensor(np.abs(_rand(rng, 6)) + 0.5)
    bias = Tensor(_rand(rng, 6))
    return grad_check(lambda t: _weighted_sum(T.layer_norm(t, gain, bias)), x)


@register("op.embedding")
def _check_embedding():
    rng = np.random.default_rng(4)
    table = param(_rand(rng, 6, 3))
    ids = np.array([0, 2, 2, 5])
    return grad_check(lambda t: _weighted_sum(T.embedding(t, ids)), table)


@register("op.index_select")
def _check_index_select():
    rng = np.random.default_rng(5)
    x = param(_rand(rng, 5, 3))
    idx = np.array([4, 0, 0, 2])
    return grad_check(lambda t: _weighted_sum(T.index_select(t, idx)), x)


@register("op.concat")
def _check_concat():
    rng = np.random.default_rng(6)
    x = param(_rand(rng, 2, 3))
    other = Tensor(_rand(rng, 2, 2))
    return grad_check(lambda t: _weighted_sum(T.concat([t, other], axis=1)), x)


@register("op.wavelet_analysis")
def _check_wavelet():
    rng = np.random.default_rng(7)
    filt = WaveletFilter()
    x = param(_rand(rng, 16, 2))

    def f(t):
        a, d = dwt_level(t, filt)
        return T.add(_weighted_sum(a, 8), _weighted_sum(d, 9))

    return grad_check(f, x)


@register("op.wavelet_filters")
def _check_wavelet_filter_grad():
    rng = np.random.default_rng(8)
    filt = WaveletFilter()
    x = Tensor(_rand(rng, 16, 2))

    def f(low):
        filt.low = low
        a, d = dwt_level(x, filt)
        return T.add(_weighted_sum(a, 8), _weighted_sum(d, 9))

    return grad_check(f, filt.low)


@register("op.dct2")
def _check_dct():
    rng = np.random.default_rng(9)
    x = param(_rand(rng, 8, 6))
    return grad_check(lambda t: _weighted_sum(dct2(t)), x)


@register("op.band_boundaries")
def _check_band_boundaries():
    rng = np.random.default_rng(10)
    grid = radial_frequency_grid(8, 6)
    coeff = Tensor(_rand(rng, 8, 6))
    bb = BandBoundaries()

    def f(raw):
        bb.raw = raw
        masks = band_masks(bb.boundaries(), grid)
        parts = [T.mul(T.mul(coeff, m), float(k + 1)) for k, m in enumerate(masks)]
        return T.tsum(T.square(T.concat(parts, axis=0)))

    return grad_check(f, bb.raw)


@register("block.attention")
def _check_attention():
    rng = np.random.default_rng(11)
    attn = MultiHeadAttention(8, 2, rng)
    x = param(_rand(rng, 1, 5, 8))
    return grad_check(lambda t: _weighted_sum(attn(t, t)), x)


@register("block.transformer")
def _check_block():
    rng = np.random.default_rng(12)
    block = TransformerBlock(8, 2, rng)
    x = param(_rand(rng, 1, 4, 8))
    return grad_check(lambda t: _weighted_sum(block(t)), x)


def _tiny_model() -> Tuple[DcerModel, ModalityBatch]:
    cfg = ModelConfig(
        hidden=16, heads=2, queries=2, fusion_layers=2,
        audio_len=16, audio_dim=3, video_len=6, video_dim=5,
        text_len=5, text_vocab=11, wavelet_levels=2,
    )
    model = DcerModel(cfg, seed=0)
    rng = np.random.default_rng(13)
    batch = ModalityBatch(
        audio=_rand(rng, 2, 16, 3),
        video=_rand(rng, 2, 6, 5),
        text=rng.integers(0, 11, size=(2, 5)).astype(np.int32),
        labels=np.array([0.5, -1.0], dtype=np.float32),
        presence=complete_presence(2),
    )
    return model, batch


@register("pipeline.fusion_mse")
def _check_full_fusion():
    """Full fusion forward + MSE loss on a 2-sample batch, gradient w.r.t.
    the bottleneck query tokens."""
    model, batch = _tiny_model()
    q = model.fusion.queries

    def f(_):
        yhat, _, _ = model.forward_full(batch)
        return loss_pred(yhat, batch.labels)

    return grad_check(f, q)


@register("pipeline.encoder_audio")
def _check_audio_encoder():
    model, batch = _tiny_model()

    def f(low):
        model.audio_enc.filt.low = low
        return _weighted_sum(model.audio_enc(Tensor(batch.audio)))

    return grad_check(f, model.audio_enc.filt.low)


@register("energy.grad_wrt_h")
def _check_energy_h():
    model, batch = _tiny_model()
    enc = model.encode_all(batch)
    h_all = model.concat_modalities(enc, (True, True, True))
    z = Tensor(model.fuse(h_all).data)
    h = param(enc["audio"].data.copy())
    return grad_check(lambda t: T.tsum(model.energy_net(t, z)), h)


@register("loss.pred")
def _check_loss_pred():
    rng = np.random.default_rng(14)
    yhat = param(_rand(rng, 6))
    y = _rand(rng, 6)
    return grad_check(lambda t: loss_pred(t, y), yhat)


@register("loss.recon")
def _check_loss_recon():
    rng = np.random.default_rng(15)
    h_true = Tensor(_rand(rng, 2, 4, 3))
    h_hat = param(_rand(rng, 2, 4, 3))
    return grad_check(lambda t: loss_recon(h_true, t), h_hat)


@register("loss.energy")
def _check_loss_energy():
    """Energy loss differentiates the energy network's parameters at a fixed
    final point; checked w.r.t. the f-network's first-layer weights."""
    model, batch = _tiny_model()
    enc = model.encode_all(batch)
    h_all = model.concat_modalities(enc, (True, True, True))
    z = Tensor(model.fuse(h_all).data)
    h = Tensor(enc["audio"].data.copy())
    w = model.energy_net.f.l0.w
    return grad_check(lambda _: T.tmean(model.energy_net(h, z)), w)


@register("loss.joint")
def _check_loss_joint():
    rng = np.random.default_rng(16)
    z_full = Tensor(_rand(rng, 2, 2, 5))
    z_rec = param(_rand(rng, 2, 2, 5))
    return grad_check(lambda t: loss_joint(z_full, t), z_rec)


def run_registered_checks() -> List[Tuple[str, GradCheckReport]]:
    return [(name, CHECKS[name]()) for name in sorted(CHECKS)]
