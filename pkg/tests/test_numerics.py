import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepindex.network import sigmoid
from deepindex.numerics import (
    NonFiniteError,
    ShapeError,
    as_matrix,
    as_vector,
    bernoulli_mask,
    finite_diff_grad,
    make_rng,
    matmul,
    relative_error,
)


def test_matmul_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(np.eye(2), a), a)


def test_matmul_row_by_column():
    assert matmul([[1, 2]], [[3], [4]]).tolist() == [[11.0]]


def test_matmul_matches_triple_loop():
    rng = make_rng(0)
    a, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 3))
    ref = np.zeros((5, 3))
    for i in range(5):
        for j in range(3):
            for k in range(7):
                ref[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(matmul(a, b), ref, rtol=1e-13, atol=1e-13)


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_matmul_associative(m, n, p, q, seed):
    rng = make_rng(seed)
    a, b, c = rng.standard_normal((m, n)), rng.standard_normal((n, p)), rng.standard_normal((p, q))
    left, right = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
    assert relative_error(left, right) < 1e-10


def test_constructors_reject_non_finite():
    with pytest.raises(NonFiniteError):
        as_matrix([[1.0, np.nan]])
    with pytest.raises(NonFiniteError):
        as_vector([np.inf])
    with pytest.raises(ShapeError):
        as_matrix([1.0, 2.0])


def test_fd_quadratic():
    g = finite_diff_grad(lambda x: float(x @ x), np.array([1.0, 2.0]), h=1e-5)
    assert np.max(np.abs(g - [2.0, 4.0])) < 1e-8


def test_fd_constant():
    assert np.array_equal(finite_diff_grad(lambda x: 3.0, np.zeros(4)), np.zeros(4))


def test_fd_sigmoid_slope_at_zero():
    s0 = 0.5
    g = finite_diff_grad(lambda x: float(sigmoid(x[0])), np.array([0.0]))
    assert abs(g[0] - s0 * (1 - s0)) < 1e-10


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_fd_exact_on_quadratics(seed):
    rng = make_rng(seed)
    A, b, c = rng.standard_normal((3, 3)), rng.standard_normal(3), rng.standard_normal()
    x = rng.standard_normal(3)
    g = finite_diff_grad(lambda v: float(v @ A @ v + b @ v + c), x)
    assert np.max(np.abs(g - ((A + A.T) @ x + b))) < 1e-8


def test_fd_names_coordinate():
    def f(x):
        return np.inf if x[1] > 0.5 else 0.0

    with pytest.raises(NonFiniteError, match="coordinate 1"):
        finite_diff_grad(f, np.array([0.0, 0.5]))


def test_fd_rejects_bad_step():
    with pytest.raises(ValueError):
        finite_diff_grad(lambda x: 0.0, np.zeros(1), h=0.0)


def test_bernoulli_extremes():
    rng = make_rng(1)
    assert np.all(bernoulli_mask(rng, (3, 4), 1.0) == 1)
    assert np.all(bernoulli_mask(rng, (3, 4), 0.0) == 0)


def test_bernoulli_half():
    m = bernoulli_mask(make_rng(2), (100, 100), 0.5)
    assert set(np.unique(m)) <= {0.0, 1.0}
    assert abs(m.mean() - 0.5) < 0.02


@pytest.mark.parametrize("p", [-0.1, 1.5])
def test_bernoulli_rejects_p(p):
    with pytest.raises(ValueError):
        bernoulli_mask(make_rng(0), (2, 2), p)


def test_bernoulli_deterministic():
    a = bernoulli_mask(make_rng(5, 3), (50, 50), 0.3)
    b = bernoulli_mask(make_rng(5, 3), (50, 50), 0.3)
    assert np.array_equal(a, b)


def test_rng_stream_reproducible():
    a = make_rng(123).random(10**6)
    b = make_rng(123).random(10**6)
    assert np.array_equal(a, b)


def test_rng_streams_differ():
    assert not np.array_equal(make_rng(1, 0).random(8), make_rng(1, 1).random(8))


def test_rng_frozen_values():
    # guards against silent changes of generator algorithm or seeding
    np.testing.assert_array_equal(make_rng(0).integers(0, 2**31, size=3), FROZEN_INTS)


FROZEN_INTS = [1826701615, 1367864807, 1097657232]
