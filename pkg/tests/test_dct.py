"""2D DCT correctness and the soft radial band partition."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcer import tensor as T
from dcer.errors import InputError
from dcer.frequency import (
    BandBoundaries,
    band_masks,
    dct2,
    dct_matrix,
    idct2,
    radial_frequency_grid,
)
from dcer.tensor import Tensor, grad_check


def test_constant_input_concentrates_in_dc():
    x = Tensor(np.full((8, 6), 2.0, dtype=np.float32))
    c = dct2(x).data
    dc = c[0, 0]
    rest = c.copy()
    rest[0, 0] = 0.0
    assert abs(dc) > 1.0
    assert np.abs(rest).max() < 1e-4


def test_roundtrip_and_parseval():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(16, 12)).astype(np.float32))
    c = dct2(x)
    xr = idct2(c)
    assert np.abs(xr.data - x.data).max() < 1e-4
    ex = float((x.data**2).sum())
    ec = float((c.data**2).sum())
    assert abs(ec - ex) / ex < 1e-4


def test_dct_matrix_orthonormal():
    c = dct_matrix(16).astype(np.float64)
    np.testing.assert_allclose(c @ c.T, np.eye(16), atol=1e-6)


def test_boundaries_ordered_and_match_init():
    bb = BandBoundaries()
    b = bb.boundaries().data
    np.testing.assert_allclose(b, [0.25, 0.5, 0.75], atol=1e-6)
    assert 0.0 < b[0] < b[1] < b[2] < 1.0


def test_boundaries_ordered_for_any_raw_values():
    bb = BandBoundaries()
    rng = np.random.default_rng(1)
    for _ in range(20):
        bb.raw.data = rng.normal(scale=3.0, size=4).astype(np.float32)
        b = bb.boundaries().data
        assert 0.0 < b[0] < b[1] < b[2] < 1.0


def test_bad_boundary_init_rejected():
    with pytest.raises(InputError):
        BandBoundaries(init=(0.5, 0.25, 0.75))


@settings(max_examples=25, deadline=None)
@given(
    raw=st.lists(st.floats(-4.0, 4.0), min_size=4, max_size=4),
    rows=st.integers(4, 20),
    cols=st.integers(4, 20),
)
def test_masks_partition_of_unity(raw, rows, cols):
    bb = BandBoundaries()
    bb.raw.data = np.asarray(raw, dtype=np.float32)
    grid = radial_frequency_grid(rows, cols)
    masks = band_masks(bb.boundaries(), grid)
    total = sum(m.data for m in masks)
    assert np.abs(total - 1.0).max() < 1e-5


def test_hard_threshold_limit_assigns_low_frequency_to_band_one():
    grid = np.array([[0.1]], dtype=np.float32)
    b = Tensor(np.array([0.25, 0.5, 0.75], dtype=np.float32))
    masks = band_masks(b, grid, tau=1e-4)
    weights = [float(m.data[0, 0]) for m in masks]
    assert weights[0] == pytest.approx(1.0, abs=1e-6)
    assert max(weights[1:]) < 1e-6


def test_boundary_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    grid = radial_frequency_grid(8, 6)
    coeff = Tensor(rng.normal(size=(8, 6)).astype(np.float32))
    bb = BandBoundaries()

    def loss(raw):
        bb_local = BandBoundaries()
        # reuse the tensor under check so the graph reaches it
        bb_local.raw = raw
        masks = band_masks(bb_local.boundaries(), grid)
        weighted = [T.mul(T.mul(coeff, m), float(k + 1)) for k, m in enumerate(masks)]
        return T.tsum(T.square(T.concat(weighted, axis=0)))

    assert grad_check(loss, bb.raw).passed
