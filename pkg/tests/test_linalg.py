import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rosaq.errors import ConvergenceError
from rosaq.linalg import as_matrix, eig_sym, gram, matmul, pca_rotation, random_orthogonal


def _naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def test_matmul_matches_triple_loop(rng):
    a = rng.standard_normal((5, 7))
    b = rng.standard_normal((7, 3))
    np.testing.assert_allclose(matmul(a, b), _naive_matmul(a, b), rtol=1e-13, atol=1e-13)


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError, match="cannot multiply"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


@pytest.mark.parametrize("bad", [np.ones(3), np.ones((2, 2, 2)), [[1.0, np.nan]], [[np.inf]]])
def test_as_matrix_rejects(bad):
    with pytest.raises(ValueError):
        as_matrix(bad)


def test_gram_exactly_symmetric(rng):
    g = gram(rng.standard_normal((50, 9)))
    assert np.array_equal(g, g.T)


def test_gram_empty():
    with pytest.raises(ValueError):
        gram(np.zeros((0, 0)))


def test_diag_eigen(kernels):
    res = eig_sym(np.diag([1.0, 3.0, 2.0]))
    np.testing.assert_array_equal(res.eigenvalues, [3.0, 2.0, 1.0])
    np.testing.assert_array_equal(np.abs(res.eigenvectors), np.eye(3)[:, [1, 2, 0]])


def test_two_by_two_example(kernels):
    res = eig_sym(np.array([[2.0, 1.0], [1.0, 2.0]]))
    np.testing.assert_allclose(res.eigenvalues, [3.0, 1.0], atol=1e-14)
    r = 1 / np.sqrt(2)
    np.testing.assert_allclose(res.eigenvectors[:, 0], [r, r], atol=1e-14)


def test_sign_convention(kernels, rng):
    x = rng.standard_normal((40, 12))
    vec = eig_sym(gram(x)).eigenvectors
    idx = np.argmax(np.abs(vec), axis=0)
    assert np.all(vec[idx, np.arange(12)] >= 0)


def test_repeated_eigenvalues_stay_in_order(kernels):
    # identity: every value ties; stable order keeps the diagonal positions
    res = eig_sym(np.eye(4))
    np.testing.assert_array_equal(res.eigenvectors, np.eye(4))


def test_zero_matrix(kernels):
    res = eig_sym(np.zeros((3, 3)))
    assert np.all(res.eigenvalues == 0)
    np.testing.assert_allclose(res.eigenvectors.T @ res.eigenvectors, np.eye(3))


def test_rejects_asymmetric():
    with pytest.raises(ValueError, match="symmetric"):
        eig_sym(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_rejects_nonsquare():
    with pytest.raises(ValueError, match="square"):
        eig_sym(np.ones((2, 3)))


def test_convergence_error_when_sweeps_exhausted(rng):
    a = gram(rng.standard_normal((20, 10)))
    with pytest.raises(ConvergenceError):
        eig_sym(a, max_sweeps=1)


def test_results_are_read_only(rng):
    res = pca_rotation(gram(rng.standard_normal((10, 4))))
    with pytest.raises(ValueError):
        res.eigenvalues[0] = 1.0


def test_backends_agree_bitwise(rng):
    a = gram(rng.standard_normal((80, 32)))
    py = eig_sym(a, backend="python")
    try:
        cy = eig_sym(a, backend="cython")
    except ImportError:
        pytest.skip("compiled extension not built")
    assert np.array_equal(py.eigenvectors, cy.eigenvectors)
    assert np.array_equal(py.eigenvalues, cy.eigenvalues)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 24), seed=st.integers(0, 2**32 - 1))
def test_eig_properties(n, seed):
    rng = np.random.default_rng(seed)
    a = gram(rng.standard_normal((n + 3, n)))
    res = eig_sym(a)
    v, lam = res.eigenvectors, res.eigenvalues
    scale = 1 + np.max(np.abs(a))
    assert np.max(np.abs(a @ v - v * lam)) <= 1e-10 * scale
    assert np.max(np.abs(v.T @ v - np.eye(n))) <= 1e-10
    assert np.all(np.diff(lam) <= 0)
    assert abs(lam.sum() - np.trace(a)) <= 1e-8 * max(np.trace(a), 1.0)


def test_random_orthogonal(rng):
    q = random_orthogonal(16, rng)
    np.testing.assert_allclose(q.T @ q, np.eye(16), atol=1e-13)
