"""Central finite-difference checks for every differentiable op.

Each check compares the analytic gradient against central differences with
step 1e-3 and relative tolerance 1e-2 (float32), over 10 random seeds for
the core ops.
"""

import numpy as np
import pytest

from dcer import tensor as T
from dcer.nn import MultiHeadAttention, TransformerBlock
from dcer.tensor import Tensor, grad_check, param

SEEDS = list(range(10))


def _rand(rng, *shape):
    return rng.normal(size=shape).astype(np.float32)


@pytest.mark.parametrize("seed", SEEDS)
def test_matmul_grad(seed):
    rng = np.random.default_rng(seed)
    b = Tensor(_rand(rng, 7, 3))
    x = param(_rand(rng, 5, 7))
    assert grad_check(lambda t: T.tsum(T.matmul(t, b)), x).passed
    y = param(_rand(rng, 7, 3))
    a = Tensor(_rand(rng, 5, 7))
    assert grad_check(lambda t: T.tsum(T.matmul(a, t)), y).passed


@pytest.mark.parametrize("seed", SEEDS)
def test_softmax_grad(seed):
    rng = np.random.default_rng(seed)
    x = param(_rand(rng, 4, 6))
    w = Tensor(_rand(rng, 4, 6))  # weighting makes the scalarization non-degenerate
    assert grad_check(lambda t: T.tsum(T.mul(T.softmax(t, axis=1), w)), x).passed


@pytest.mark.parametrize(
    "op",
    [
        lambda t: T.add(t, 0.7),
        lambda t: T.sub(1.3, t),
        lambda t: T.mul(t, t),
        lambda t: T.div(t, 2.5),
        lambda t: T.div(1.0, T.add(T.square(t), 1.0)),
        T.neg,
        T.square,
        T.sigmoid,
        T.softplus,
        T.gelu,
        lambda t: T.transpose(t),
        lambda t: T.reshape(t, (6, 2)),
        lambda t: T.broadcast_to(T.reshape(t, (3, 4, 1)), (3, 4, 5)),
        lambda t: T.narrow(t, 1, 1, 2),
        lambda t: T.tmean(t, axis=0),
        lambda t: T.tmean(t),
        lambda t: T.tsum(t, axis=1, keepdims=True),
    ],
)
def test_elementwise_and_shape_grads(op):
    rng = np.random.default_rng(42)
    x = param(_rand(rng, 3, 4))
    weight = None

    def f(t):
        out = op(t)
        nonlocal weight
        if weight is None:
            weight = Tensor(np.random.default_rng(7).normal(size=out.shape).astype(np.float32))
        return T.tsum(T.mul(out, weight))

    assert grad_check(f, x).passed


def test_layer_norm_grad():
    rng = np.random.default_rng(1)
    x = param(_rand(rng, 2, 5))
    gain = param(np.abs(_rand(rng, 5)) + 0.5)
    bias = param(_rand(rng, 5))
    w = Tensor(_rand(rng, 2, 5))
    assert grad_check(lambda t: T.tsum(T.mul(T.layer_norm(t, gain, bias), w)), x).passed
    assert grad_check(lambda g: T.tsum(T.mul(T.layer_norm(x, g, bias), w)), gain).passed
    assert grad_check(lambda b: T.tsum(T.mul(T.layer_norm(x, gain, b), w)), bias).passed


def test_embedding_grad():
    rng = np.random.default_rng(2)
    table = param(_rand(rng, 6, 3))
    ids = np.array([0, 2, 2, 5])
    w = Tensor(_rand(rng, 4, 3))
    assert grad_check(lambda t: T.tsum(T.mul(T.embedding(t, ids), w)), table).passed


def test_index_select_grad():
    rng = np.random.default_rng(3)
    x = param(_rand(rng, 5, 3))
    idx = np.array([4, 0, 0, 2])
    w = Tensor(_rand(rng, 4, 3))
    assert grad_check(lambda t: T.tsum(T.mul(T.index_select(t, idx), w)), x).passed


def test_concat_grad():
    rng = np.random.default_rng(4)
    a = param(_rand(rng, 2, 3))
    b = Tensor(_rand(rng, 2, 2))
    w = Tensor(_rand(rng, 2, 5))
    assert grad_check(lambda t: T.tsum(T.mul(T.concat([t, b], axis=1), w)), a).passed


def test_periodic_conv_grads():
    rng = np.random.default_rng(5)
    x = param(_rand(rng, 16, 2))
    filt = param(_rand(rng, 8))
    w = Tensor(_rand(rng, 8, 2))
    assert grad_check(
        lambda t: T.tsum(T.mul(T.periodic_conv_down(t, filt), w)), x
    ).passed
    assert grad_check(
        lambda f: T.tsum(T.mul(T.periodic_conv_down(x, f), w)), filt
    ).passed
    c = param(_rand(rng, 8, 2))
    wu = Tensor(_rand(rng, 16, 2))
    assert grad_check(
        lambda t: T.tsum(T.mul(T.periodic_conv_up(t, filt, 16), wu)), c
    ).passed
    assert grad_check(
        lambda f: T.tsum(T.mul(T.periodic_conv_up(c, f, 16), wu)), filt
    ).passed


def test_attention_block_grad():
    rng = np.random.default_rng(6)
    attn = MultiHeadAttention(8, 2, rng)
    x = param(_rand(rng, 1, 5, 8))
    w = Tensor(_rand(rng, 1, 5, 8))
    assert grad_check(lambda t: T.tsum(T.mul(attn(t, t), w)), x).passed


def test_transformer_block_grad():
    rng = np.random.default_rng(7)
    block = TransformerBlock(8, 2, rng)
    x = param(_rand(rng, 1, 4, 8))
    w = Tensor(_rand(rng, 1, 4, 8))
    assert grad_check(lambda t: T.tsum(T.mul(block(t), w)), x).passed
    # ... and through a weight matrix of the block
    wq = block.attn.wq.w
    assert grad_check(lambda _: T.tsum(T.mul(block(x), w)), wq).passed
