import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smp_perturb.series import EpsPoly, EpsSeries

finite = st.floats(-10, 10, allow_nan=False)


def series(order, shape=()):
    size = (order + 1) * int(np.prod(shape, dtype=int))
    return st.lists(finite, min_size=size, max_size=size).map(
        lambda v: EpsSeries(np.array(v).reshape((order + 1,) + shape))
    )


def test_min_order_rule_add_and_mul():
    a = EpsSeries([1.0, 2.0, 3.0])
    b = EpsSeries([1.0, 1.0])
    assert (a + b).order == 1
    assert (a * b).order == 1
    np.testing.assert_allclose((a * b).coeffs, [1.0, 3.0])


def test_scalar_ops_keep_order():
    a = EpsSeries([1.0, 2.0])
    assert np.allclose((a + 1.0).coeffs, [2.0, 2.0])
    assert np.allclose((2.0 * a).coeffs, [2.0, 4.0])
    assert np.allclose((1.0 - a).coeffs, [0.0, -2.0])
    assert np.allclose((a / 2).coeffs, [0.5, 1.0])


def test_order_padding_and_truncation():
    a = EpsSeries([1.0], order=2)
    assert a.order == 2 and np.allclose(a.coeffs, [1.0, 0.0, 0.0])
    assert EpsSeries([1.0, 2.0, 3.0], order=1).order == 1
    with pytest.raises(ValueError):
        a.truncate(3)
    with pytest.raises(ValueError):
        EpsSeries([])
    with pytest.raises(ValueError):
        EpsSeries([np.nan])


def test_evaluation_and_indexing():
    m = EpsSeries(np.array([[[1.0, 2.0], [3.0, 4.0]], [[1.0, 0.0], [0.0, 1.0]]]))
    assert m.shape == (2, 2)
    np.testing.assert_allclose(m(0.5), [[1.5, 2.0], [3.0, 4.5]])
    assert m[0, 1](2.0) == 2.0


def test_matmul_cauchy_product():
    A = EpsSeries(np.array([np.eye(2), [[0.0, 1.0], [0.0, 0.0]]]))
    x = EpsSeries(np.array([[1.0, 1.0], [0.0, 2.0]]))
    y = A @ x
    np.testing.assert_allclose(y.coeffs, [[1.0, 1.0], [1.0, 2.0]])


def test_division_by_series_rejected():
    with pytest.raises(TypeError):
        EpsSeries([1.0]) / EpsSeries([1.0])


def test_poly_degree():
    assert EpsPoly([0.5, -1.0, 0.0]).degree == 1
    assert EpsPoly([0.0]).degree == 0


@settings(max_examples=50, deadline=None)
@given(series(3, (2, 2)), series(2, (2, 2)), series(3, (2,)))
def test_matmul_associative(a, b, c):
    left = (a @ b) @ c
    right = a @ (b @ c)
    assert left.order == right.order == 2
    np.testing.assert_allclose(left.coeffs, right.coeffs, atol=1e-12 * (1 + np.abs(left.coeffs).max()))


@settings(max_examples=50, deadline=None)
@given(series(2), series(3), series(2))
def test_scalar_ring_laws(a, b, c):
    tol = 1e-12 * (1 + max(np.abs(x.coeffs).max() for x in (a, b, c))) ** 3
    np.testing.assert_allclose(((a * b) * c).coeffs, (a * (b * c)).coeffs, atol=tol)
    np.testing.assert_allclose((a * (b + c)).coeffs, (a * b + a * c).coeffs, atol=tol)
    np.testing.assert_allclose((a * b).coeffs, (b * a).coeffs, atol=tol)


@settings(max_examples=30, deadline=None)
@given(series(3), st.floats(-0.5, 0.5))
def test_product_evaluates_pointwise_for_exact_polys(a, e):
    b = EpsSeries([1.0, -2.0], order=3)
    prod = a * b
    # b has degree 1, so the product is exact up to the dropped eps^4 term
    expected = a(e) * b(e) - a.coeffs[3] * (-2.0) * e**4
    assert prod(e) == pytest.approx(expected, abs=1e-10)
