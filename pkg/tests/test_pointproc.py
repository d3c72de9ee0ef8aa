import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heavybrw.pointproc import (HatFunction, PointMeasure, counts_in, ecdf, empirical_pmf,
                                ks_two_sample, ks_vs_cdf, laplace_at, order_statistics, superpose,
                                total_variation)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False, allow_subnormal=False)
points = st.lists(finite, max_size=40)


def test_canonical_form_merges_duplicates():
    pm = PointMeasure([2.0, -1.0, 2.0, 0.5], [1, 3, 2, 1])
    np.testing.assert_array_equal(pm.locations, [-1.0, 0.5, 2.0])
    np.testing.assert_array_equal(pm.multiplicities, [3, 1, 3])
    assert pm.total_mass == 7 and len(pm) == 3


def test_invalid_inputs():
    with pytest.raises(ValueError):
        PointMeasure([1.0], [0])
    with pytest.raises(ValueError):
        PointMeasure([np.inf], [1])
    with pytest.raises(ValueError):
        PointMeasure([1.0, 2.0], [1])
    with pytest.raises(ValueError):
        PointMeasure([1.0], [1]).scaled(0.0)


def test_from_points_drops_zero_weights():
    pm = PointMeasure.from_points([1.0, 2.0, 3.0], [0, 2, 1])
    assert pm == PointMeasure([2.0, 3.0], [2, 1])


def test_counts_in_half_open():
    pm = PointMeasure([0.5, 1.0, 1.5, 3.0], [1, 2, 3, 4])
    assert counts_in(pm, 1.0) == 7
    assert counts_in(pm, 0.5, 1.5) == 5
    assert counts_in(pm, -np.inf) == 10
    with pytest.raises(ValueError):
        counts_in(pm, 2.0, 1.0)


def test_restricted_and_laplace():
    pm = PointMeasure([-2.0, 0.1, 3.0], [1, 5, 2])
    assert pm.restricted(1.0) == PointMeasure([-2.0, 3.0], [1, 2])
    f = HatFunction(1.0)
    assert pm.integrate(f) == pytest.approx(1.0 + 2.0)
    assert laplace_at(pm, f) == pytest.approx(np.exp(-3.0))
    assert laplace_at(PointMeasure.empty(), f) == 1.0


def test_hat_function_shape():
    f = HatFunction(0.5, 2.0)
    np.testing.assert_allclose(f([0.0, 0.5, 0.75, 1.0, -7.0]), [0.0, 0.0, 1.0, 2.0, 2.0])
    with pytest.raises(ValueError):
        HatFunction(0.0)


def test_order_statistics_repeat_multiplicities():
    pm = PointMeasure([1.0, 5.0, 3.0], [1, 2, 4])
    assert order_statistics(pm, 4) == [5.0, 5.0, 3.0, 3.0]
    assert order_statistics(pm, 10) == [5.0, 5.0, 3.0, 3.0, 3.0, 3.0, 1.0]


def test_ks_helpers():
    assert ks_two_sample([1, 2, 3], [1, 2, 3]) == 0.0
    assert ks_two_sample([0, 0], [1, 1]) == 1.0
    # one sample at 0.5 against U(0,1): ECDF jumps from 0 to 1 at 0.5
    assert ks_vs_cdf([0.5], lambda x: np.clip(x, 0, 1)) == pytest.approx(0.5)
    np.testing.assert_allclose(ecdf([1, 2, 2, 4], [0, 2, 5]), [0.0, 0.75, 1.0])


def test_tv_and_empirical_pmf():
    assert empirical_pmf([1, 1, 3, 5]) == {1: 0.5, 3: 0.25, 5: 0.25}
    assert total_variation({1: 0.5, 2: 0.5}, {2: 0.5, 3: 0.5}) == pytest.approx(0.5)


@settings(max_examples=100, deadline=None)
@given(points, points)
def test_superpose_adds_counts(a, b):
    pa, pb = PointMeasure.from_points(a), PointMeasure.from_points(b)
    s = superpose([pa, pb])
    assert s.total_mass == len(a) + len(b)
    for lo in (-1e5, -1.0, 0.0, 2.0):
        assert counts_in(s, lo) == counts_in(pa, lo) + counts_in(pb, lo)


@settings(max_examples=100, deadline=None)
@given(points, st.integers(-10, 10))
def test_scaling_commutes_with_counts(a, e):
    # powers of two scale exactly, so the comparison has no rounding
    b = 2.0 ** e
    pm = PointMeasure.from_points(a)
    for lo in (-3.0, 0.0, 1.0):
        assert counts_in(pm.scaled(b), lo * b) == counts_in(pm, lo)


@settings(max_examples=100, deadline=None)
@given(points)
def test_canonical_form_is_idempotent(a):
    pm = PointMeasure.from_points(a)
    assert PointMeasure(pm.locations, pm.multiplicities) == pm
    assert pm.total_mass == len(a)
    assert np.all(np.diff(pm.locations) > 0)


@settings(max_examples=100, deadline=None)
@given(points.filter(len), st.randoms(use_true_random=False))
def test_order_of_construction_is_irrelevant(a, r):
    b = list(a)
    r.shuffle(b)
    pa, pb = PointMeasure.from_points(a), PointMeasure.from_points(b)
    assert pa == pb
    f = HatFunction(1.0)
    assert laplace_at(pa, f) == laplace_at(pb, f)
    for lo in (-1.0, 0.0, 5.0):
        assert counts_in(pa, lo) == counts_in(pb, lo)
    assert order_statistics(pa, 1) == [max(a)]
