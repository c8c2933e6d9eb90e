import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from resguide.tensor import (ArityError, Shape4, ShapeError, SizeError, channel_band, concat_channels,
                             elementwise, reduce_mean, reduce_sum, zeros)


def test_zeros_small():
    t = zeros((1, 1, 2, 2))
    assert t.shape == (1, 1, 2, 2)
    assert np.array_equal(t, np.zeros((1, 1, 2, 2)))
    assert t.dtype == np.float32


def test_zeros_len_and_precision():
    assert zeros((2, 3, 4, 4), "double").size == 96
    assert zeros((2, 3, 4, 4), "double").dtype == np.float64


@pytest.mark.parametrize("shape", [(1, 1, 0, 2), (0, 1, 1, 1), (1, -1, 2, 2)])
def test_zeros_rejects_empty_extent(shape):
    with pytest.raises(SizeError):
        zeros(shape)


def test_zeros_rejects_overflow():
    with pytest.raises(SizeError):
        Shape4.of((2 ** 20, 2 ** 20, 2 ** 20, 2 ** 20))


def test_shape_needs_four_extents():
    with pytest.raises(ShapeError):
        Shape4.of((1, 2, 3))


def test_elementwise_examples():
    a = np.array([1.0, 2.0]).reshape(1, 1, 1, 2)
    b = np.array([3.0, 4.0]).reshape(1, 1, 1, 2)
    assert elementwise("add", a, b).ravel().tolist() == [4.0, 6.0]
    assert elementwise("scale", np.array([1.0, -2.0]), 0.5).tolist() == [0.5, -1.0]
    assert elementwise("sub", b, a).ravel().tolist() == [2.0, 2.0]
    assert elementwise("mul", a, b).ravel().tolist() == [3.0, 8.0]


def test_elementwise_shape_mismatch():
    with pytest.raises(ShapeError):
        elementwise("add", np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))


def test_elementwise_unknown_op():
    with pytest.raises(ValueError):
        elementwise("pow", np.zeros(2), np.zeros(2))


def test_elementwise_does_not_mutate():
    a = np.ones((1, 1, 2, 2))
    b = np.ones((1, 1, 2, 2))
    elementwise("add", a, b)
    assert np.array_equal(a, np.ones((1, 1, 2, 2)))


finite32 = st.floats(-1e3, 1e3, width=32)


@given(hnp.arrays(np.float32, (2, 3), elements=finite32),
       hnp.arrays(np.float32, (2, 3), elements=finite32),
       hnp.arrays(np.float32, (2, 3), elements=finite32))
def test_add_commutes_and_nearly_associates(a, b, c):
    assert np.array_equal(elementwise("add", a, b), elementwise("add", b, a))
    left = elementwise("add", elementwise("add", a, b), c)
    right = elementwise("add", a, elementwise("add", b, c))
    scale = np.maximum.reduce([np.abs(a), np.abs(b), np.abs(c), np.abs(left)])
    ulp = np.spacing(np.maximum(scale, np.float32(1e-30)).astype(np.float32))
    assert np.all(np.abs(left - right) <= 4 * ulp)


def test_concat_shape_and_identity():
    a, b = np.zeros((1, 3, 8, 8)), np.ones((1, 3, 8, 8))
    assert concat_channels([a, b]).shape == (1, 6, 8, 8)
    assert concat_channels([a]) is a


def test_concat_errors():
    with pytest.raises(ArityError):
        concat_channels([])
    with pytest.raises(ShapeError):
        concat_channels([np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3))])
    with pytest.raises(ShapeError):
        concat_channels([np.zeros((1, 1, 2, 2)), np.zeros((2, 1, 2, 2))])


@settings(max_examples=50)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 5), st.lists(st.integers(1, 4), min_size=1, max_size=5),
       st.integers(0, 2 ** 31))
def test_concat_band_round_trip(n, h, w, chans, seed):
    rng = np.random.default_rng(seed)
    parts = [rng.standard_normal((n, c, h, w)) for c in chans]
    cat = concat_channels(parts)
    assert cat.shape[1] == sum(chans)
    for j, p in enumerate(parts):
        assert np.array_equal(channel_band(cat, chans, j), p)


def test_reduce_mean_examples():
    assert reduce_mean(np.zeros((1, 1, 3, 3))) == 0.0
    assert reduce_mean(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2)) == 2.5


def test_reduce_mean_vs_exact_sum():
    x = np.random.default_rng(7).standard_normal(10 ** 5)
    assert abs(reduce_mean(x) - math.fsum(x) / x.size) < 1e-12


def test_reduce_mean_single_precision_accumulates_in_double():
    x = np.full(10 ** 6, 0.1, dtype=np.float32)
    exact = float(np.float32(0.1))
    assert abs(reduce_mean(x) - exact) < 1e-12
    assert abs(reduce_sum(x) - exact * 10 ** 6) < 1e-6


def test_reduce_mean_empty():
    with pytest.raises(SizeError):
        reduce_mean(np.zeros(0))
