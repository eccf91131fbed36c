"""Dense real linear algebra for kernel and bound computations.

Everything operates on plain float64 numpy arrays. The symmetric
eigendecomposition is a hand-written cyclic Jacobi iteration: it is
deterministic, dependency-free beyond numpy element ops, and accurate
for the matrix sizes this toolkit produces (NTK matrices up to a few
thousand rows; inputs far beyond that are a non-goal and will be slow).

Positive-definite solves go through a Cholesky factorization. Shapes
are validated up front so failures carry a diagnosis instead of a bare
numpy broadcast error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError, ParameterError, SingularMatrixError

__all__ = [
    "SymEigen",
    "as_matrix",
    "sym_eigen",
    "solve_spd",
    "matmul",
    "transpose",
    "trace",
    "clip_eigenvalues",
]

# Relative off-diagonal mass at which the Jacobi sweep loop stops.
_JACOBI_TOL = 1e-12
_JACOBI_MAX_SWEEPS = 64


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Validate and return ``m`` as a 2-D float64 array.

    Raises DimensionError for non-2-D input and DataError for NaN/Inf
    entries.
    """
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if a.size and not np.all(np.isfinite(a)):
        raise DataError(f"{name} contains non-finite entries")
    return a


def _require_square_symmetric(m, name: str, tol: float = 1e-9) -> np.ndarray:
    a = as_matrix(m, name)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    scale = max(1.0, float(np.abs(a).max()) if a.size else 1.0)
    if a.size and float(np.abs(a - a.T).max()) > tol * scale:
        raise DataError(f"{name} is not symmetric within {tol:g}")
    # Symmetrize so downstream rotations start from an exactly symmetric copy.
    return (a + a.T) / 2.0


@dataclass(frozen=True)
class SymEigen:
    """Eigendecomposition of a symmetric matrix.

    eigenvalues are sorted descending; eigenvectors holds the matching
    orthonormal eigenvectors as columns, so
    ``eigenvectors @ diag(eigenvalues) @ eigenvectors.T`` reconstructs
    the input.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def sym_eigen(m) -> SymEigen:
    """Decompose a symmetric matrix with cyclic Jacobi rotations.

    The input is symmetrized as (M + Mᵀ)/2 before iteration, per the
    documented contract. Eigenvalues come back in descending order.
    """
    a = _require_square_symmetric(m, "sym_eigen input")
    n = a.shape[0]
    if n == 0:
        raise DimensionError("sym_eigen input must have at least one row")
    if n == 1:
        return SymEigen(np.array([a[0, 0]]), np.array([[1.0]]))

    a = a.copy()
    v = np.eye(n)
    fro = float(np.linalg.norm(a))
    if fro == 0.0:
        return SymEigen(np.zeros(n), v)

    for _ in range(_JACOBI_MAX_SWEEPS):
        off = float(np.linalg.norm(a - np.diag(np.diag(a))))
        if off <= _JACOBI_TOL * fro:
            break
        # Skip rotations on entries too small to change the result; the
        # threshold shrinks with the remaining off-diagonal mass.
        thresh = off / (n * n)
        for p in range(n - 1):
            row_p = a[p]
            for q in range(p + 1, n):
                apq = row_p[q]
                if abs(apq) <= thresh * 1e-3:
                    continue
                # Classic Jacobi rotation angle for the (p, q) pivot.
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                # A <- Jᵀ A J applied as a row update then a column update.
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                cp = a[:, p].copy()
                cq = a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq

    eigenvalues = np.diag(a).copy()
    # Stable descending order keeps repeated eigenvalues in a fixed,
    # reproducible arrangement.
    order = np.argsort(-eigenvalues, kind="stable")
    return SymEigen(eigenvalues[order], v[:, order])


def solve_spd(m, b) -> np.ndarray:
    """Solve m·x = b for symmetric positive definite m.

    ``b`` may be a vector or a matrix of stacked right-hand sides. A
    non-PD input raises SingularMatrixError naming the offending
    minimum eigenvalue.
    """
    a = _require_square_symmetric(m, "solve_spd matrix")
    rhs = np.asarray(b, dtype=np.float64)
    if rhs.shape[0] != a.shape[0]:
        raise DimensionError(
            f"right-hand side length {rhs.shape[0]} does not match matrix order {a.shape[0]}"
        )
    if rhs.size and not np.all(np.isfinite(rhs)):
        raise DataError("right-hand side contains non-finite entries")
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        min_eig = float(sym_eigen(a).eigenvalues[-1])
        raise SingularMatrixError(
            f"matrix is not positive definite (min eigenvalue {min_eig:.6e})"
        ) from None
    y = np.linalg.solve(chol, rhs)
    return np.linalg.solve(chol.T, y)


def matmul(a, b) -> np.ndarray:
    """Dense product with an explicit shape check."""
    x = as_matrix(a, "matmul left operand")
    y = as_matrix(b, "matmul right operand")
    if x.shape[1] != y.shape[0]:
        raise DimensionError(
            f"cannot multiply shapes {x.shape} and {y.shape}: inner dimensions differ"
        )
    return x @ y


def transpose(a) -> np.ndarray:
    return as_matrix(a, "transpose input").T.copy()


def trace(a) -> float:
    x = as_matrix(a, "trace input")
    if x.shape[0] != x.shape[1]:
        raise DimensionError(f"trace requires a square matrix, got shape {x.shape}")
    return float(np.trace(x))


def clip_eigenvalues(m, q: float) -> np.ndarray:
    """Raise every eigenvalue of a symmetric matrix to at least q.

    Eigenvectors are untouched; eigenvalues already at or above q are
    preserved. The result is exactly symmetrized. Idempotent up to
    floating-point roundoff.
    """
    if not np.isfinite(q) or q <= 0.0:
        raise ParameterError(f"clip threshold must be a positive real, got {q!r}")
    decomp = sym_eigen(m)
    clipped = np.maximum(decomp.eigenvalues, q)
    out = (decomp.eigenvectors * clipped) @ decomp.eigenvectors.T
    return (out + out.T) / 2.0
