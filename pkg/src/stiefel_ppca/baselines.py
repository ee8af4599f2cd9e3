"""Maximum-likelihood PPCA and classical PCA via the covariance eigendecomposition."""
from dataclasses import dataclass

import numpy as np

from .diagnostics import fix_signs
from .errors import RankDeficient, ZeroEigenvalue
from .linalg import as_matrix, sym_eigen

EIGEN_FLOOR = 1e-12


def empirical_covariance(Y):
    """Mean and ``(1/N) sum (y - mean)(y - mean)^T``."""
    Y = as_matrix(Y, "Y")
    mu = Y.mean(axis=0)
    centered = Y - mu
    return mu, centered.T @ centered / Y.shape[0]


@dataclass
class MlPpcaSolution:
    mu_ml: np.ndarray
    W_ml: np.ndarray
    noise_var_ml: float
    eigvals: np.ndarray
    eigvecs: np.ndarray

    @property
    def Q(self):
        return self.W_ml.shape[1]

    @property
    def sigma(self):
        """Singular values of ``W_ml``, i.e. ``sqrt(lambda_q - noise_var)``."""
        return np.sqrt(self.eigvals[: self.Q] - self.noise_var_ml)

    def to_json(self):
        return {
            "mu_ml": self.mu_ml.tolist(),
            "W_ml": self.W_ml.tolist(),
            "noise_var_ml": self.noise_var_ml,
            "sigma": self.sigma.tolist(),
            "eigvals": self.eigvals.tolist(),
        }


def fit_ml_ppca(Y, Q):
    """Closed-form maximum-likelihood PPCA with the rotation fixed to ``R = I``.

    The noise variance is the mean of the trailing ``D - Q`` eigenvalues of
    the empirical covariance and ``W = U_Q (Lambda_Q - noise I)^{1/2}``; the
    columns of ``U_Q`` follow the first-entry-positive sign convention.

    Raises
    ------
    RankDeficient
        If some retained eigenvalue does not exceed the noise variance.
    """
    Y = getattr(Y, "Y", Y)
    mu, cov = empirical_covariance(Y)
    D = cov.shape[0]
    if not 1 <= Q < D:
        raise ValueError(f"need 1 <= Q < D, got Q={Q}, D={D}")
    eig = sym_eigen(cov)
    lam = eig.values
    noise_var = float(np.mean(lam[Q:]))
    excess = lam[:Q] - noise_var
    tol = 1e-10 * max(abs(lam[0]), 1.0)
    if np.any(excess <= tol):
        raise RankDeficient(
            f"retained eigenvalues {lam[:Q]} do not exceed the noise variance {noise_var}"
        )
    U, _ = fix_signs(eig.vectors[:, :Q])
    W = U * np.sqrt(excess)
    return MlPpcaSolution(mu, W, noise_var, lam, eig.vectors)


def project_latent_ppca(solution, Y, noise_var=None):
    """Posterior mean of the latent vectors, ``(W^T W + s I)^{-1} W^T (y - mu)``.

    ``noise_var`` overrides the fitted noise variance, which gives access to
    the small-noise limit.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    W = solution.W_ml
    if Y.shape[1] != W.shape[0]:
        raise ValueError(f"Y must have {W.shape[0]} columns")
    s = solution.noise_var_ml if noise_var is None else noise_var
    M = W.T @ W + s * np.eye(W.shape[1])
    return np.linalg.solve(M, W.T @ (Y - solution.mu_ml).T).T


@dataclass
class ClassicalPca:
    components: np.ndarray
    eigvals: np.ndarray
    projections: np.ndarray
    mean: np.ndarray


def classical_pca(Y, Q):
    """Whitened principal component projection ``Lambda^{-1/2} U^T (y - mu)``.

    Components are sign-fixed so the first entry of each column is positive.
    """
    Y = as_matrix(Y, "Y")
    mu, cov = empirical_covariance(Y)
    if not 1 <= Q <= cov.shape[0]:
        raise ValueError(f"need 1 <= Q <= D, got Q={Q}")
    eig = sym_eigen(cov)
    lam = eig.values[:Q]
    if np.any(lam <= EIGEN_FLOOR):
        raise ZeroEigenvalue(f"top-{Q} eigenvalues include {lam.min():.3e}")
    U, _ = fix_signs(eig.vectors[:, :Q])
    projections = (Y - mu) @ U / np.sqrt(lam)
    return ClassicalPca(U, eig.values, projections, mu)
