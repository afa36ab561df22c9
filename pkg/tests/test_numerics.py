import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from mpsum.errors import DomainError, InvalidMatrix
from mpsum.numerics import arcosh, artanh, jacobi_eigh, rng_derive, sigmoid, softplus


def test_diagonal_matrix_is_its_own_decomposition():
    e = jacobi_eigh([[2.0, 0.0], [0.0, 3.0]])
    assert e.eigenvalues.tolist() == [2.0, 3.0]
    assert np.array_equal(np.abs(e.eigenvectors), np.eye(2))


def test_swap_matrix():
    e = jacobi_eigh([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(e.eigenvalues, [-1.0, 1.0], atol=1e-15)
    r = 1 / math.sqrt(2)
    np.testing.assert_allclose(np.abs(e.eigenvectors[:, 0]), [r, r], atol=1e-15)
    assert e.eigenvectors[0, 0] * e.eigenvectors[1, 0] < 0
    assert e.eigenvectors[0, 1] * e.eigenvectors[1, 1] > 0


def test_random_50_reconstruction():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((50, 50))
    m = x + x.T
    e = jacobi_eigh(m)
    q, lam = e.eigenvectors, e.eigenvalues
    assert np.linalg.norm(m @ q - q * lam) <= 1e-8 * np.linalg.norm(m)
    assert np.all(np.diff(lam) >= 0)
    np.testing.assert_allclose(q.T @ q, np.eye(50), atol=1e-12)


@pytest.mark.parametrize("bad", [np.ones((2, 3)), [[1.0, 2.0], [0.0, 1.0]],
                                 [[np.nan, 0.0], [0.0, 1.0]], np.ones(3)])
def test_rejects_bad_matrices(bad):
    with pytest.raises(InvalidMatrix):
        jacobi_eigh(bad)


@given(st.integers(1, 24).flatmap(
    lambda n: arrays(np.float64, (n, n), elements=st.floats(-100, 100))))
def test_eigh_property(x):
    m = (x + x.T) / 2
    e = jacobi_eigh(m)
    norm = max(np.linalg.norm(m), 1e-300)
    off = e.eigenvectors.T @ m @ e.eigenvectors
    off -= np.diag(np.diag(off))
    assert np.linalg.norm(off) <= 1e-8 * norm
    assert abs(e.eigenvalues.sum() - np.trace(m)) <= 1e-8 * max(1.0, norm)


def test_rng_streams():
    a = rng_derive(42, "init").uniform(100)
    assert np.array_equal(a, rng_derive(42, "init").uniform(100))
    assert not np.array_equal(a, rng_derive(42, "dropout").uniform(100))
    assert not np.array_equal(rng_derive(42, "x").uniform(100), rng_derive(43, "x").uniform(100))


def test_scalar_functions():
    assert softplus(0.0) == pytest.approx(math.log(2), abs=1e-15)
    assert arcosh(1.0) == 0.0
    assert sigmoid(0.0) == 0.5
    assert sigmoid(-800.0) == 0.0 and sigmoid(800.0) == 1.0
    with pytest.raises(DomainError):
        arcosh(0.5)
    with pytest.raises(DomainError):
        artanh(1.0)


@given(st.floats(-700, 700))
def test_softplus_bounds(x):
    assert softplus(x) >= max(0.0, x)


def test_softplus_tail():
    xs = np.array([10.0, 20.0, 40.0, 80.0])
    gaps = softplus(xs) - xs
    assert np.all(gaps >= 0) and np.all(np.diff(gaps) <= 0)
    assert gaps[0] < 5e-5 and gaps[-1] == 0.0


def test_arcosh_inverts_cosh_on_grid():
    t = np.linspace(0.0, 20.0, 2001)
    assert np.abs(arcosh(np.cosh(t)) - t).max() <= 1e-10


@given(st.floats(1e-6, 20.0))
def test_arcosh_inverts_cosh(t):
    # below t ~ 1e-6 the half-ulp error of cosh(t), amplified by 1/sinh(t),
    # exceeds 1e-10 before arcosh is even called
    assert abs(arcosh(math.cosh(t)) - t) <= 1e-10


@given(st.floats(0.0, 1e-6))
def test_arcosh_near_one_is_conditioning_limited(t):
    assert abs(arcosh(math.cosh(t)) - t) <= max(1e-10, 2.3e-16 / max(t, 1e-300))
