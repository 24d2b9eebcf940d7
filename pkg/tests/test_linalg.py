import numpy as np
import pytest
from hypothesis import given, strategies as st

from arbspec.errors import ValidationError
from arbspec.linalg import SymMatrix, decompose, pinv, quadratic_form, range_project

from conftest import kernel_residuals, penrose_residuals, psd_matrix


def test_pinv_scalar():
    np.testing.assert_allclose(pinv([[2.0]]), [[0.5]])


def test_pinv_zero_matrix():
    np.testing.assert_array_equal(pinv(np.zeros((3, 3))), np.zeros((3, 3)))


def test_pinv_rank_one():
    np.testing.assert_allclose(pinv([[1.0, 1.0], [1.0, 1.0]]), np.full((2, 2), 0.25), atol=1e-15)


def test_range_project_identity():
    x = np.array([1.0, -2.0, 3.0])
    np.testing.assert_allclose(range_project(np.eye(3), x), x)


def test_range_project_rank_one():
    np.testing.assert_allclose(range_project([[1.0, 1.0], [1.0, 1.0]], [1.0, 0.0]), [0.5, 0.5])


def test_range_project_zero_matrix():
    np.testing.assert_array_equal(range_project(np.zeros((2, 2)), [3.0, 4.0]), [0.0, 0.0])


def test_not_symmetric_rejected():
    with pytest.raises(ValidationError):
        SymMatrix([[1.0, 0.5], [0.0, 1.0]])


def test_negative_eigenvalue_rejected():
    with pytest.raises(ValidationError):
        pinv([[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(ValidationError):
        pinv([[-1.0]])


def test_dimension_mismatch():
    with pytest.raises(ValidationError):
        range_project(np.eye(2), [1.0, 2.0, 3.0])
    with pytest.raises(ValidationError):
        decompose([1.0], np.eye(2))


def test_tiny_negative_eigenvalue_accepted():
    c = np.diag([1.0, -1e-12])
    np.testing.assert_allclose(pinv(c), np.diag([1.0, 0.0]))


def test_batched_matches_single(rng):
    cs = np.stack([psd_matrix(rng, 4, r) for r in (0, 1, 2, 4)])
    batch = pinv(cs)
    for c, p in zip(cs, batch):
        np.testing.assert_allclose(p, pinv(c), rtol=1e-12, atol=1e-14)


@st.composite
def psd(draw):
    dim = draw(st.integers(1, 8))
    rank = draw(st.integers(0, dim))
    seed = draw(st.integers(0, 2**32 - 1))
    return psd_matrix(np.random.default_rng(seed), dim, rank)


@given(psd())
def test_penrose_conditions(c):
    assert np.all(penrose_residuals(c, pinv(c)) <= 1e-10)


@given(psd(), st.integers(0, 2**32 - 1))
def test_kernel_decomposition(c, seed):
    a = np.random.default_rng(seed).standard_normal(c.shape[0])
    lam, nu = decompose(a, c)
    assert max(kernel_residuals(a, c, lam, nu, pinv(c))) <= 1e-10


@given(st.integers(1, 8), st.integers(0, 8), st.integers(0, 2**32 - 1))
def test_penrose_wishart(dim, rank, seed):
    g = np.random.default_rng(seed).standard_normal((dim, min(rank, dim)))
    c = g @ g.T
    assert np.all(penrose_residuals(c, pinv(c)) <= 1e-10)


@given(psd(), st.integers(0, 2**32 - 1))
def test_minimality_of_lambda(c, seed):
    r = np.random.default_rng(seed)
    a = c @ r.standard_normal(c.shape[0])
    lam, _ = decompose(a, c)
    k = r.standard_normal(c.shape[0])
    k = k - range_project(c, k)
    gamma = lam + k
    np.testing.assert_allclose(c @ gamma, a, atol=1e-8 * (1 + np.max(np.abs(a))))
    assert np.linalg.norm(gamma) >= np.linalg.norm(lam) - 1e-10 * (1 + np.linalg.norm(lam))
    assert quadratic_form(gamma, c) >= quadratic_form(lam, c) - 1e-10 * (1 + quadratic_form(lam, c))


@given(psd())
def test_range_project_idempotent(c):
    x = np.ones(c.shape[0])
    y = range_project(c, x)
    np.testing.assert_allclose(range_project(c, y), y, atol=1e-10)
