import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from hypothesis.extra import numpy as hnp

from xmodal.errors import NumericalFailure
from xmodal.numerics import check_gradient, cosine_similarity, cosine_similarity_flagged, mean_pool

finite = st.floats(-1e3, 1e3, allow_nan=False)
vec = hnp.arrays(np.float64, st.integers(1, 8).map(lambda n: (n,)), elements=finite)


def test_mean_pool_examples():
    np.testing.assert_array_equal(mean_pool([[1, 3], [3, 5]]), [2, 4])
    np.testing.assert_array_equal(mean_pool([[7, 7, 7]]), [7, 7, 7])


def test_mean_pool_brute_force(rng):
    m = rng.random((5, 3))
    oracle = [sum(m[t][j] for t in range(5)) / 5 for j in range(3)]
    np.testing.assert_allclose(mean_pool(m), oracle, atol=1e-6)


@given(hnp.arrays(np.float64, (3, 4), elements=finite), hnp.arrays(np.float64, (3, 4), elements=finite),
       finite, finite)
def test_mean_pool_linear(a, b, alpha, beta):
    lhs = mean_pool(alpha * a + beta * b)
    rhs = alpha * mean_pool(a) + beta * mean_pool(b)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9 * (1 + np.abs(rhs).max()))


@pytest.mark.parametrize("a,b,expected", [([1, 0], [0, 1], 0.0), ([3, 4], [3, 4], 1.0), ([1, 2], [2, 1], 0.8)])
def test_cosine_examples(a, b, expected):
    assert cosine_similarity(a, b) == pytest.approx(expected, abs=1e-15)


def test_cosine_zero_flagged():
    assert cosine_similarity_flagged([0, 0], [1, 2]) == (0.0, True)
    assert cosine_similarity_flagged([0, 0], [0, 0]) == (0.0, True)
    assert cosine_similarity_flagged([1, 0], [1, 2])[1] is False


@given(st.integers(1, 6).flatmap(lambda n: st.tuples(
    hnp.arrays(np.float64, n, elements=finite), hnp.arrays(np.float64, n, elements=finite))),
    st.floats(1e-3, 1e3))
def test_cosine_symmetry_bounds_scale(pair, c):
    a, b = pair
    s = cosine_similarity(a, b)
    assert s == cosine_similarity(b, a)
    assert abs(s) <= 1 + 1e-12
    assume(np.linalg.norm(a) > 1e-6 and np.linalg.norm(b) > 1e-6)
    assert cosine_similarity(c * a, b) == pytest.approx(s, abs=1e-9)


def test_check_gradient_quadratic():
    x = np.array([1.0, -2.0])
    assert check_gradient(lambda v: float(v @ v), x, 2 * x) < 1e-6


def test_check_gradient_constant():
    assert check_gradient(lambda v: 3.0, [1.0, 2.0], [0.0, 0.0]) == 0.0


def test_check_gradient_detects_wrong_gradient():
    x = np.array([1.0, -2.0])
    assert check_gradient(lambda v: float(v @ v), x, 3 * x) > 0.1


def test_check_gradient_non_finite():
    with pytest.raises(NumericalFailure):
        check_gradient(lambda v: math.inf, [1.0], [0.0])
