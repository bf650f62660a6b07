"""Bottleneck fusion contracts: shapes, attention behavior, permutation
invariance, capacity, prediction determinism."""

import numpy as np
import pytest

from dcer import tensor as T
from dcer.batch import ModalityBatch, complete_presence
from dcer.config import ModelConfig
from dcer.errors import ContractError
from dcer.fusion import BottleneckAttention, BottleneckFusion, PredictionHead
from dcer.model import DcerModel
from dcer.tensor import Tensor, no_grad

CFG = ModelConfig()


def _model():
    return DcerModel(CFG, seed=0)


def _batch(n=3, seed=0):
    rng = np.random.default_rng(seed)
    return ModalityBatch(
        audio=rng.normal(size=(n, 64, 8)).astype(np.float32),
        video=rng.normal(size=(n, 16, 12)).astype(np.float32),
        text=rng.integers(0, 32, size=(n, 12)).astype(np.int32),
        labels=rng.uniform(-3, 3, size=n).astype(np.float32),
        presence=complete_presence(n),
    )


def test_bottleneck_state_shape_and_attention_rows():
    model = _model()
    with no_grad():
        _, z, _ = model.forward_full(_batch())
    assert z.shape == (3, CFG.queries, CFG.hidden)
    probs = model.fusion.layer0.cross.last_probs
    np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-5)


def test_single_token_attention_returns_its_value_projection():
    rng = np.random.default_rng(1)
    attn = BottleneckAttention(8, 2, rng)
    q = Tensor(rng.normal(size=(3, 8)).astype(np.float32))
    h = Tensor(rng.normal(size=(1, 1, 8)).astype(np.float32))
    with no_grad():
        out = attn(q, h)
        expected = attn.wo(h)
    for k in range(3):
        np.testing.assert_allclose(out.data[0, k], expected.data[0, 0], atol=1e-6)


def test_uniform_tokens_give_equal_outputs_across_queries():
    rng = np.random.default_rng(2)
    attn = BottleneckAttention(8, 2, rng)
    q = Tensor(rng.normal(size=(4, 8)).astype(np.float32))
    token = rng.normal(size=8).astype(np.float32)
    h = Tensor(np.tile(token, (1, 7, 1)))
    with no_grad():
        out = attn(q, h).data
    for k in range(1, 4):
        np.testing.assert_allclose(out[0, k], out[0, 0], atol=1e-5)


def test_bottleneck_attention_grad_and_shape():
    rng = np.random.default_rng(3)
    attn = BottleneckAttention(128, 4, rng)
    q = T.param(rng.normal(size=(4, 128)).astype(np.float32))
    h = Tensor(rng.normal(size=(1, 84, 128)).astype(np.float32))
    out = attn(q, h)
    assert out.shape == (1, 4, 128)
    w = Tensor(rng.normal(size=out.shape).astype(np.float32))
    report = T.grad_check(lambda t: T.tsum(T.mul(attn(t, h), w)), q)
    assert report.passed, report


def test_fusion_rejects_empty_sequences():
    model = _model()
    fusion = model.fusion
    with pytest.raises(ContractError):
        fusion(Tensor(np.zeros((1, 0, 128), dtype=np.float32)))
    with pytest.raises(ContractError):
        model.concat_modalities({}, (False, False, False))


def test_token_permutation_leaves_bottleneck_unchanged():
    model = _model()
    batch = _batch()
    with no_grad():
        enc = model.encode_all(batch)
        h = model.concat_modalities(enc, (True, True, True))
        z1 = model.fuse(h).data
        perm = np.random.default_rng(7).permutation(h.shape[1])
        h_perm = Tensor(h.data[:, perm, :])
        z2 = model.fuse(h_perm).data
    assert np.abs(z1 - z2).max() < 1e-5


def test_concat_order_does_not_change_bottleneck():
    model = _model()
    batch = _batch()
    with no_grad():
        enc = model.encode_all(batch)
        z1 = model.fuse(model.concat_modalities(enc, (True, True, True))).data
        z2 = model.fuse(
            model.concat_modalities(enc, (True, True, True), order=("text", "audio", "video"))
        ).data
    assert np.abs(z1 - z2).max() < 1e-5


def test_only_text_present_is_h_plus_type_embedding():
    model = _model()
    batch = _batch()
    with no_grad():
        enc = model.encode_all(batch)
        h = model.concat_modalities(enc, (False, False, True))
    expected = enc["text"].data + model.type_embed.data[2]
    np.testing.assert_allclose(h.data, expected, atol=1e-6)
    assert h.shape[1] == CFG.text_len


def test_concat_length_is_sum_of_present_lengths():
    model = _model()
    batch = _batch()
    with no_grad():
        enc = model.encode_all(batch)
        h = model.concat_modalities(enc, (True, True, True))
    assert h.shape[1] == 64 + 64 + 12


def test_prediction_reads_bottleneck_only_uniform_h_permutation():
    # permuting the tokens of a uniform H changes nothing at all, so the
    # prediction must be identical through Z
    model = _model()
    rng = np.random.default_rng(8)
    token = rng.normal(size=128).astype(np.float32)
    h = np.tile(token, (2, 140, 1))
    with no_grad():
        z1 = model.fuse(Tensor(h))
        y1 = model.predict(z1).data
        hp = h[:, rng.permutation(140), :]
        z2 = model.fuse(Tensor(hp))
        y2 = model.predict(z2).data
    np.testing.assert_array_equal(y1, y2)


def test_capacity_bound_shape_assertion():
    model = _model()
    with no_grad():
        _, z, _ = model.forward_full(_batch(2))
    assert z.data.shape == (2, 4, 128)
    assert z.data.size == 2 * 4 * 128  # K*D floats per sample into the head


def test_predict_deterministic_and_zero_final_layer_gives_bias():
    model = _model()
    head = model.head
    rng = np.random.default_rng(9)
    z = Tensor(rng.normal(size=(2, 4, 128)).astype(np.float32))
    with no_grad():
        y1 = head(z).data
        y2 = head(z).data
    np.testing.assert_array_equal(y1, y2)
    last = head.net.l1
    last.w.data = np.zeros_like(last.w.data)
    last.b.data = np.full_like(last.b.data, 0.37)
    with no_grad():
        y3 = head(z).data
    np.testing.assert_allclose(y3, 0.37, atol=1e-6)


def test_masked_fusion_matches_dropped_concat():
    # excluding a modality from the sequence and masking its tokens produce
    # the same bottleneck up to float reassociation
    model = _model()
    batch = _batch()
    with no_grad():
        enc = model.encode_all(batch)
        h_partial = model.concat_modalities(enc, (True, False, True))
        z_drop = model.fuse(h_partial).data

        h_full = model.concat_modalities(enc, (True, True, True))
        presence = np.array([[True, False, True]] * len(batch))
        z_mask = model.fuse(h_full, model.token_mask(presence)).data
    assert np.abs(z_drop - z_mask).max() < 1e-4
