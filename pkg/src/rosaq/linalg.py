"""Dense matrix helpers, symmetric eigendecomposition and PCA rotations.

Matrices are plain 2-D ``float64`` numpy arrays. :func:`as_matrix` is the
single gate that enforces shape and finiteness; everything downstream
assumes its output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import ConvergenceError

DEFAULT_TOL = 1e-10
MAX_SWEEPS = 100
# Jacobi stops once the off-diagonal Frobenius norm falls below this
# fraction of the full norm; rotations never re-inflate it.
_STOP_REL = 1e-15


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Validate ``x`` as a finite 2-D array and return a float64 copy-or-view."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class EigenDecomposition:
    """Orthonormal eigenvectors (as columns) with eigenvalues sorted descending."""

    eigenvectors: np.ndarray
    eigenvalues: np.ndarray
    sweeps: int = 0

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def gram(x) -> np.ndarray:
    """Return ``x.T @ x``, symmetrized so the result is exactly symmetric."""
    x = as_matrix(x, "x")
    if x.size == 0:
        raise ValueError("gram of an empty matrix")
    g = x.T @ x
    return 0.5 * (g + g.T)


def _sign_fix(vectors: np.ndarray) -> np.ndarray:
    # first entry of maximal magnitude in each column made non-negative
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.where(vectors[idx, np.arange(vectors.shape[1])] < 0, -1.0, 1.0)
    return vectors * signs


def eig_sym(a, tol: float = DEFAULT_TOL, max_sweeps: int = MAX_SWEEPS,
            backend: str | None = None) -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi sweeps.

    Pairs are visited in row-major order ``(0,1), (0,2), ..., (n-2,n-1)`` on
    every sweep. Eigenvalues are returned in descending order (ties keep the
    lower diagonal position first) and each eigenvector's largest-magnitude
    entry is made non-negative.

    Raises:
        ValueError: ``a`` is not square or not symmetric within 1e-9.
        ConvergenceError: still not diagonal after ``max_sweeps`` sweeps.
    """
    a = as_matrix(a, "a")
    n, m = a.shape
    if n != m:
        raise ValueError(f"eig_sym needs a square matrix, got {a.shape}")
    if n == 0:
        raise ValueError("eig_sym of an empty matrix")
    scale = 1.0 + float(np.max(np.abs(a)))
    if np.max(np.abs(a - a.T)) > 1e-9 * scale:
        raise ValueError("eig_sym needs a symmetric matrix")
    kern = _backend.kernels if backend is None else _backend.get(backend)
    work = np.ascontiguousarray(0.5 * (a + a.T))
    vt, sweeps, converged = kern.jacobi_sweeps(work, int(max_sweeps), _STOP_REL)
    if not converged:
        raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps (n={n})")
    diag = np.diagonal(work).copy()
    order = np.argsort(-diag, kind="stable")
    vectors = _sign_fix(np.asarray(vt)[order].T)
    result = EigenDecomposition(_frozen(vectors), _frozen(diag[order]), sweeps)
    resid = np.max(np.abs(a @ result.eigenvectors - result.eigenvectors * result.eigenvalues))
    if resid > tol * scale:
        raise ConvergenceError(f"eigen residual {resid:.3e} exceeds {tol:.1e}*(1+max|a|)")
    return result


def pca_rotation(gram_matrix, tol: float = DEFAULT_TOL) -> EigenDecomposition:
    """PCA rotation of a Gram matrix: its eigenvectors, principal axis first."""
    return eig_sym(gram_matrix, tol=tol)


def random_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR of a Gaussian with sign fix)."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diagonal(r))
