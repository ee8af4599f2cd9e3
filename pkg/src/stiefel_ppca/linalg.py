"""Dense real linear algebra used throughout the package.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 in C (row-major)
order. The helpers here add the shape checks and failure semantics the rest of
the package relies on; the heavy lifting is numpy/LAPACK except for the
symmetric eigensolver, which is a cyclic Jacobi method.
"""
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack, solve_triangular

from .errors import NoConvergence, NotPositiveDefinite

JITTER_FLOOR = 1e-12
RETRY_JITTER = 1e-8
JACOBI_MAX_SWEEPS = 100
JACOBI_TOL = 1e-12


def as_matrix(a, name="matrix"):
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def _check_symmetric(a, tol=1e-10):
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] == 0:
        raise ValueError("matrix dimension must be at least 1")
    scale = max(np.max(np.abs(a)), 1.0)
    if np.max(np.abs(a - a.T)) > tol * scale:
        raise ValueError("matrix is not symmetric")


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"shape mismatch in matmul: {a.shape} @ {b.shape}")
    return a @ b


def transpose(a):
    return np.ascontiguousarray(as_matrix(a).T)


def axpy(alpha, x, y):
    """Return ``alpha * x + y`` for arrays of identical shape."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch in axpy: {x.shape} vs {y.shape}")
    return alpha * x + y


def frobenius_norm(a):
    return float(np.sqrt(np.sum(np.square(a))))


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor ``L`` with ``L @ L.T == A``."""

    lower: np.ndarray

    @property
    def dim(self):
        return self.lower.shape[0]

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))

    def solve(self, b):
        """Solve ``A x = b`` using two triangular solves."""
        z = solve_triangular(self.lower, b, lower=True, check_finite=False)
        return solve_triangular(self.lower, z, lower=True, trans="T", check_finite=False)

    def inverse(self):
        inv, info = lapack.dpotri(self.lower, lower=1)
        if info != 0:
            raise NotPositiveDefinite(max(info - 1, 0))
        inv = np.tril(inv)
        return inv + np.tril(inv, -1).T


def cholesky(a, check=True):
    """Cholesky factorization of a symmetric positive definite matrix.

    Raises
    ------
    NotPositiveDefinite
        If LAPACK hits a non-positive pivot, or a pivot ``L_ii**2`` is at or
        below ``1e-12 * max(diag(A))``. The exception carries the index of the
        offending pivot.
    """
    a = as_matrix(a)
    if check:
        _check_symmetric(a)
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefinite(0, float("nan"))
    lower, info = lapack.dpotrf(a, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise NotPositiveDefinite(info - 1)
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    pivots = np.diag(lower) ** 2
    floor = JITTER_FLOOR * np.max(np.diag(a))
    bad = np.nonzero(pivots <= floor)[0]
    if bad.size:
        raise NotPositiveDefinite(int(bad[0]), float(pivots[bad[0]]))
    return CholeskyFactor(lower)


def cholesky_with_retry(a):
    """Cholesky, retrying once with jitter ``1e-8 * mean(diag)`` on failure."""
    try:
        return cholesky(a, check=False)
    except NotPositiveDefinite:
        jitter = RETRY_JITTER * float(np.mean(np.diag(a)))
        return cholesky(a + jitter * np.eye(a.shape[0]), check=False)


@dataclass(frozen=True)
class SymEigen:
    """Eigenvalues sorted descending with matching unit eigenvector columns."""

    values: np.ndarray
    vectors: np.ndarray


def sym_eigen(a, max_sweeps=JACOBI_MAX_SWEEPS, tol=JACOBI_TOL):
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Iterates row-cyclic sweeps until the off-diagonal Frobenius norm drops
    below ``tol`` times the Frobenius norm of the input.
    """
    a = as_matrix(a)
    _check_symmetric(a, tol=1e-8)
    n = a.shape[0]
    work = 0.5 * (a + a.T)
    vecs = np.eye(n)
    total = frobenius_norm(work)
    target = tol * total

    off_mask = ~np.eye(n, dtype=bool)

    def off_norm(m):
        # summed directly; subtracting the diagonal from the total cancels badly
        return float(np.sqrt(np.sum(np.square(m[off_mask]))))

    for _ in range(max_sweeps):
        if off_norm(work) <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = work[p, q]
                if apq == 0.0 or abs(apq) < 1e-300:
                    continue
                tau = (work[q, q] - work[p, p]) / (2.0 * apq)
                t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + np.hypot(1.0, tau))
                c = 1.0 / np.hypot(1.0, t)
                s = t * c
                col_p = work[:, p].copy()
                col_q = work[:, q]
                work[:, p] = c * col_p - s * col_q
                work[:, q] = s * col_p + c * col_q
                row_p = work[p, :].copy()
                row_q = work[q, :]
                work[p, :] = c * row_p - s * row_q
                work[q, :] = s * row_p + c * row_q
                work[p, q] = work[q, p] = 0.0
                v_p = vecs[:, p].copy()
                v_q = vecs[:, q]
                vecs[:, p] = c * v_p - s * v_q
                vecs[:, q] = s * v_p + c * v_q
    else:
        if off_norm(work) > target:
            raise NoConvergence(
                f"Jacobi eigensolver did not converge in {max_sweeps} sweeps"
            )

    values = np.diag(work).copy()
    order = np.argsort(values, kind="stable")[::-1]
    return SymEigen(values[order], np.ascontiguousarray(vecs[:, order]))


def qr_of_gaussian(D, Q, rng):
    """Orthonormal factor of the unique QR of a ``D x Q`` standard normal matrix.

    Uniqueness comes from forcing ``diag(R) > 0``; the result is then Haar
    distributed on the Stiefel manifold. Intended as a test oracle.
    """
    if not 1 <= Q <= D:
        raise ValueError(f"need 1 <= Q <= D, got D={D}, Q={Q}")
    while True:
        z = rng.standard_normal((D, Q))
        q, r = np.linalg.qr(z)
        d = np.diag(r)
        if np.all(d != 0.0):
            return np.ascontiguousarray(q * np.sign(d))
