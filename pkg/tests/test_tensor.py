import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from seponet.tensor import DimensionError, matmul, outer_product_chain, reduce_modes

finite = st.floats(-10, 10, allow_nan=False)


def test_matmul_identity():
    np.testing.assert_array_equal(matmul(np.eye(2), np.array([[3.0], [4.0]])), [[3.0], [4.0]])


def test_matmul_hand():
    np.testing.assert_array_equal(matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]])), [[11.0]])


def test_matmul_triple_loop():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(7, 5))
    b = rng.normal(size=(5, 3))
    ref = np.zeros((7, 3))
    for i in range(7):
        for j in range(3):
            for k in range(5):
                ref[i, j] += a[i, k] * b[k, j]
    assert np.max(np.abs(matmul(a, b) - ref)) < 1e-14


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


@given(arrays(float, (4, 3), elements=finite))
def test_matmul_identity_exact(A):
    np.testing.assert_array_equal(matmul(np.eye(4), A), A)
    np.testing.assert_array_equal(matmul(A, np.eye(3)), A)


def test_outer_product_hand():
    np.testing.assert_array_equal(outer_product_chain([np.array([1.0, 2.0]), np.array([3.0, 4.0])]),
                                  [[3.0, 4.0], [6.0, 8.0]])


def test_outer_product_single():
    np.testing.assert_array_equal(outer_product_chain([np.array([5.0, 6.0])]), [5.0, 6.0])


def test_outer_product_three_loop():
    vs = [np.array([1.0, 2.0]), np.array([3.0, 4.0]), np.array([5.0, 6.0])]
    out = outer_product_chain(vs)
    for i in range(2):
        for j in range(2):
            for k in range(2):
                assert out[i, j, k] == vs[0][i] * vs[1][j] * vs[2][k]
    assert out[1, 1, 1] == 48.0


def test_outer_product_errors():
    with pytest.raises(ValueError):
        outer_product_chain([])
    with pytest.raises(DimensionError):
        outer_product_chain([np.ones((2, 2))])


@given(arrays(float, 3, elements=finite), arrays(float, 4, elements=finite), st.floats(-5, 5))
def test_outer_product_multilinear(a, b, c):
    np.testing.assert_allclose(outer_product_chain([c * a, b]), c * outer_product_chain([a, b]),
                               rtol=1e-12, atol=1e-12)


def test_reduce_modes_zero_coeffs():
    g = [np.ones((2, 3)), np.arange(6.0).reshape(2, 3)]
    np.testing.assert_array_equal(reduce_modes(np.zeros(2), g), np.zeros((2, 3)))


def test_reduce_modes_identity():
    G = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(reduce_modes(np.array([1.0]), [G]), G)


def test_reduce_modes_loop():
    G1 = np.array([[1.0, 2.0], [3.0, 4.0]])
    G2 = np.array([[0.5, -1.0], [2.0, 0.0]])
    out = reduce_modes(np.array([2.0, -1.0]), [G1, G2])
    for i in range(2):
        for j in range(2):
            assert out[i, j] == 2.0 * G1[i, j] - G2[i, j]


def test_reduce_modes_mismatch():
    with pytest.raises(DimensionError):
        reduce_modes(np.ones(2), [np.ones((2, 2)), np.ones((2, 3))])
    with pytest.raises(DimensionError):
        reduce_modes(np.ones(3), [np.ones((2, 2)), np.ones((2, 2))])


@given(arrays(float, 3, elements=finite), arrays(float, 3, elements=finite), arrays(float, (3, 2, 2), elements=finite))
def test_reduce_modes_linear(a, b, G):
    grids = list(G)
    np.testing.assert_allclose(reduce_modes(a + b, grids), reduce_modes(a, grids) + reduce_modes(b, grids),
                               atol=1e-12 * (1 + np.abs(G).max() * (np.abs(a).max() + np.abs(b).max())))
