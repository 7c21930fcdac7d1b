import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from gapaware.core import (
    DimensionError,
    InvalidGapError,
    LayerLayout,
    RngStream,
    as_param,
    hadamard_div,
    l2_norm,
    marsaglia_tsang,
    scale_add,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)
vectors = st.lists(finite, min_size=1, max_size=20).map(np.array)


def test_scale_add_examples():
    assert np.array_equal(scale_add([1, 2], [1, 1], -0.5), [0.5, 1.5])
    v = np.array([0.3, -2.0, 7.0])
    assert np.array_equal(scale_add(v, v, -1), np.zeros(3))
    assert np.array_equal(scale_add(v, np.zeros(3), 123.0), v)


def test_scale_add_dimension_mismatch():
    with pytest.raises(DimensionError):
        scale_add([1, 2], [1, 2, 3], 1.0)


@given(vectors)
def test_scale_add_zero_is_identity(v):
    assert np.array_equal(scale_add(v, v * 3.0, 0.0), v)


def test_l2_norm_examples():
    assert l2_norm(np.array([3.0, 4.0])) == 5.0
    assert l2_norm(np.zeros(5)) == 0.0
    assert l2_norm(np.ones(4)) == 2.0


@given(vectors, st.floats(-1e3, 1e3, allow_nan=False))
def test_l2_norm_homogeneous(v, c):
    lhs = l2_norm(scale_add(np.zeros_like(v), v, c))
    rhs = abs(c) * l2_norm(v)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_hadamard_div_examples():
    assert np.array_equal(hadamard_div([2, 9], [1, 3]), [2, 3])
    with pytest.raises(InvalidGapError):
        hadamard_div([1.0], [0.0])
    with pytest.raises(InvalidGapError):
        hadamard_div([1.0, 1.0], [1.0, -2.0])


@given(vectors)
def test_hadamard_div_by_ones_is_bitwise_identity(g):
    assert np.array_equal(hadamard_div(g, np.ones_like(g)), g)


def test_layout_validation():
    lay = LayerLayout.from_sizes([3, 1, 2])
    assert lay.spans == ((0, 3), (3, 4), (4, 6))
    assert lay.dim == 6 and lay.n_layers == 3
    assert list(lay.layer_ids()) == [0, 0, 0, 1, 2, 2]
    with pytest.raises(ValueError):
        LayerLayout(((0, 2), (3, 4)))
    with pytest.raises(ValueError):
        LayerLayout(())
    with pytest.raises(ValueError):
        LayerLayout(((0, 0),))


def test_as_param_checks_layout():
    assert as_param([1, 2]).dtype == np.float64
    with pytest.raises(DimensionError):
        as_param([1, 2], LayerLayout.single(3))
    with pytest.raises(DimensionError):
        as_param([])


def test_equal_seeds_equal_streams():
    a = RngStream(42).raw(1_000_000)
    b = RngStream(42).raw(1_000_000)
    assert np.array_equal(a, b)
    assert not np.array_equal(a[:100], RngStream(43).raw(100))


def test_children_are_independent_of_creation_order():
    root = RngStream(7)
    x = root.child("batch", 3).normal(5)
    root.child("noise", 0).normal(100)
    y = RngStream(7).child("batch", 3).normal(5)
    assert np.array_equal(x, y)
    assert not np.array_equal(x, RngStream(7).child("batch", 4).normal(5))


def test_stream_is_pinned_to_philox():
    # catches an accidental change of bit generator or seeding scheme
    g = np.random.Generator(np.random.Philox(np.random.SeedSequence([5])))
    assert np.array_equal(RngStream(5).uniform(10), g.random(10))


@pytest.mark.parametrize("shape", [0.3, 1.0, 2.78, 100.0])
def test_marsaglia_tsang_matches_gamma_distribution(shape):
    x = marsaglia_tsang(RngStream(11).child("g", int(shape * 100)), shape, 200_000)
    assert np.all(x > 0)
    # Kolmogorov-Smirnov against the exact CDF
    assert stats.kstest(x, stats.gamma(shape).cdf).pvalue > 1e-3
    assert x.mean() == pytest.approx(shape, rel=0.02)


def test_gamma_scale_broadcast():
    scale = np.array([1.0, 10.0, 100.0])
    x = RngStream(3).gamma(100.0, scale)
    assert x.shape == (3,)
    assert np.all(np.abs(x / (100.0 * scale) - 1) < 0.5)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**63 - 1), st.floats(0.05, 50.0))
def test_gamma_draws_reproducible(seed, shape):
    a = RngStream(seed).standard_gamma(shape, 64)
    b = RngStream(seed).standard_gamma(shape, 64)
    assert np.array_equal(a, b)
    assert np.all(a > 0)
