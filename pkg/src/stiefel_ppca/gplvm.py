"""GP latent variable model with a squared-exponential kernel.

The likelihood treats every column of ``Y`` (N x D) as an independent draw
from ``N(mu, K(X) + noise_var I)`` where ``X`` (N x Q) holds the latent
positions. The SE kernel depends only on pairwise distances, so the
likelihood is invariant to rotations of ``X``. The Householder
parameterization ``X = U diag(sigma)`` removes that symmetry: ``X^T X`` is
diagonal by construction.

Flat layouts::

    standard:    [X (row-major, N*Q) | log_variance, log_lengthscale (optional)]
    householder: [v_N | ... | v_{N-Q+1} | y_sigma (Q) | log_variance, log_lengthscale (optional)]

Kernel hyperparameters are fixed unless ``GplvmConfig.sample_kernel`` is set,
in which case they get lognormal priors.
"""
from dataclasses import dataclass, field

import numpy as np

from .householder import HouseholderChain, apply_chain, apply_chain_vjp, chain_dim, chain_sizes
from .linalg import as_matrix, cholesky_with_retry
from .priors import ordered_forward, ordered_singular_value_prior

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class SeKernelConfig:
    variance: float = 1.0
    lengthscale: float = 1.0

    def __post_init__(self):
        if not (self.variance > 0 and self.lengthscale > 0):
            raise ValueError("kernel variance and lengthscale must be positive")


@dataclass(frozen=True)
class GplvmConfig:
    """Fixed quantities of the GP-LVM.

    ``mu`` defaults to zero (appropriate for standardized data). When
    ``sample_kernel`` is true the kernel variance and lengthscale become
    parameters with ``lognormal(0, hyper_sd)`` priors and ``kernel`` only
    supplies initial values.
    """

    kernel: SeKernelConfig = field(default_factory=SeKernelConfig)
    noise_var: float = 0.1
    mu: tuple = None
    sample_kernel: bool = False
    hyper_sd: float = 1.0


class GplvmData:
    def __init__(self, Y):
        Y = as_matrix(Y, "Y")
        if Y.shape[0] < 2:
            raise ValueError("need at least 2 rows")
        if not np.all(np.isfinite(Y)):
            raise ValueError("Y contains non-finite entries")
        self.Y = Y

    @property
    def N(self):
        return self.Y.shape[0]

    @property
    def D(self):
        return self.Y.shape[1]

    def scatter_about(self, mu):
        centered = self.Y - mu[:, None]
        return centered @ centered.T


def _sq_dists(X):
    diff = X[:, None, :] - X[None, :, :]
    r2 = np.einsum("ijq,ijq->ij", diff, diff)
    upper = np.triu(r2, 1)
    return upper + upper.T


def se_kernel_matrix(X, cfg=SeKernelConfig()):
    """``K_ij = variance * exp(-|x_i - x_j|^2 / (2 lengthscale^2))``."""
    X = as_matrix(X, "X")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite entries")
    return cfg.variance * np.exp(-0.5 * _sq_dists(X) / cfg.lengthscale**2)


def linear_kernel_matrix(X):
    X = as_matrix(X, "X")
    K = X @ X.T
    return 0.5 * (K + K.T)


def _mu_vector(config, N):
    if config.mu is None:
        return np.zeros(N)
    mu = np.asarray(config.mu, dtype=np.float64)
    if mu.shape != (N,):
        raise ValueError(f"mu must have length {N}")
    return mu


def _gaussian_columns(data, K, mu, noise_var):
    """Log likelihood of the columns and ``dL/dK``."""
    N, D = data.N, data.D
    C = K.copy()
    C[np.diag_indices(N)] += noise_var
    chol = cholesky_with_retry(C)
    C_inv = chol.inverse()
    S = data.scatter_about(mu)
    C_inv_S = C_inv @ S
    value = -0.5 * N * D * LOG_2PI - 0.5 * D * chol.logdet() - 0.5 * np.trace(C_inv_S)
    dK = 0.5 * (C_inv_S @ C_inv - D * C_inv)
    return float(value), dK


def gplvm_log_likelihood(data, X, mu, noise_var, cfg=SeKernelConfig(), kernel="se"):
    """``sum_d log N(Y[:, d] | mu, K(X) + noise_var I)``.

    ``kernel`` is ``"se"`` or ``"linear"`` (``K = X X^T``, which recovers
    PPCA on the transposed problem). One Cholesky of the N x N covariance is
    shared by all D columns, with a single jittered retry on failure.
    """
    X = as_matrix(X, "X")
    mu = np.asarray(mu, dtype=np.float64)
    if X.shape[0] != data.N or mu.shape != (data.N,):
        raise ValueError("X and mu must have one row per observation row of Y")
    if not noise_var > 0:
        raise ValueError("noise variance must be positive")
    K = se_kernel_matrix(X, cfg) if kernel == "se" else linear_kernel_matrix(X)
    return _gaussian_columns(data, K, mu, noise_var)[0]


def _se_value_and_grads(data, X, config, log_var, log_len):
    """Likelihood plus gradients w.r.t. X and the log kernel hyperparameters."""
    variance, lengthscale = np.exp(log_var), np.exp(log_len)
    r2 = _sq_dists(X)
    K = variance * np.exp(-0.5 * r2 / lengthscale**2)
    value, dK = _gaussian_columns(data, K, _mu_vector(config, data.N), config.noise_var)
    A = dK * K
    grad_X = -(2.0 / lengthscale**2) * (A.sum(axis=1)[:, None] * X - A @ X)
    grad_log_var = float(np.sum(A))
    grad_log_len = float(np.sum(A * r2)) / lengthscale**2
    return value, grad_X, grad_log_var, grad_log_len


def _hyper(theta_tail, config):
    if config.sample_kernel:
        return float(theta_tail[0]), float(theta_tail[1])
    return np.log(config.kernel.variance), np.log(config.kernel.lengthscale)


def _hyper_prior(log_var, log_len, config):
    z = np.array([log_var, log_len]) / config.hyper_sd
    return -0.5 * float(z @ z), -z / config.hyper_sd


def log_posterior_gplvm_householder(data, chain, y_sigma, config=GplvmConfig(), hyper=None):
    """Log posterior of the GP-LVM with ``X = U diag(sigma)``.

    Priors mirror the Householder PPCA model with ``(D, Q)`` replaced by
    ``(N, Q)``. ``hyper`` holds ``(log_variance, log_lengthscale)`` when the
    kernel is sampled. Returns ``(value, gradient)`` in the flat layout.
    """
    if chain.D != data.N:
        raise ValueError(f"chain dimension {chain.D} does not match N={data.N}")
    y = np.asarray(y_sigma, dtype=np.float64)
    if hyper is None:
        log_var, log_len = _hyper(None, config)
    else:
        log_var, log_len = hyper

    flat_v = chain.flat()
    value = -0.5 * float(flat_v @ flat_v)
    sv_lp, grad_y, sigma = ordered_singular_value_prior(y, chain.D)
    value += sv_lp

    U, vjp = apply_chain_vjp(chain)
    X = U * sigma
    ll, grad_X, g_var, g_len = _se_value_and_grads(data, X, config, log_var, log_len)
    value += ll
    grad_v = vjp(grad_X * sigma) - flat_v
    grad_y = grad_y + np.exp(y) * np.cumsum(np.sum(grad_X * U, axis=0))
    parts = [grad_v, grad_y]
    if config.sample_kernel:
        hp, ghp = _hyper_prior(log_var, log_len, config)
        value += hp
        parts.append(np.array([g_var, g_len]) + ghp)
    return value, np.concatenate(parts)


def log_posterior_gplvm_standard(data, X, config=GplvmConfig(), hyper=None):
    """Log posterior of the GP-LVM with i.i.d. standard normal latent positions."""
    X = as_matrix(X, "X")
    if hyper is None:
        log_var, log_len = _hyper(None, config)
    else:
        log_var, log_len = hyper
    value = -0.5 * float(np.sum(X * X))
    ll, grad_X, g_var, g_len = _se_value_and_grads(data, X, config, log_var, log_len)
    value += ll
    parts = [(grad_X - X).ravel()]
    if config.sample_kernel:
        hp, ghp = _hyper_prior(log_var, log_len, config)
        value += hp
        parts.append(np.array([g_var, g_len]) + ghp)
    return value, np.concatenate(parts)


@dataclass
class GplvmHouseholderPosterior:
    data: GplvmData
    Q: int
    config: GplvmConfig = field(default_factory=GplvmConfig)

    def __post_init__(self):
        chain_sizes(self.data.N, self.Q)

    @property
    def dim(self):
        return chain_dim(self.data.N, self.Q) + self.Q + (2 if self.config.sample_kernel else 0)

    def _split(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} parameters, got {theta.shape}")
        nc = chain_dim(self.data.N, self.Q)
        chain = HouseholderChain.from_flat(theta[:nc], self.data.N, self.Q)
        hyper = theta[nc + self.Q :] if self.config.sample_kernel else None
        return chain, theta[nc : nc + self.Q], hyper

    def __call__(self, theta):
        chain, y, hyper = self._split(theta)
        return log_posterior_gplvm_householder(self.data, chain, y, self.config, hyper)

    def unpack(self, theta):
        chain, y, hyper = self._split(theta)
        U = apply_chain(chain)
        sigma = ordered_forward(y)[0]
        out = {"U": U, "sigma": sigma, "X": U * sigma}
        if hyper is not None:
            out["kernel_variance"], out["lengthscale"] = np.exp(hyper)
        return out


@dataclass
class GplvmStandardPosterior:
    data: GplvmData
    Q: int
    config: GplvmConfig = field(default_factory=GplvmConfig)

    @property
    def dim(self):
        return self.data.N * self.Q + (2 if self.config.sample_kernel else 0)

    def _split(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} parameters, got {theta.shape}")
        n = self.data.N * self.Q
        hyper = theta[n:] if self.config.sample_kernel else None
        return theta[:n].reshape(self.data.N, self.Q), hyper

    def __call__(self, theta):
        X, hyper = self._split(theta)
        return log_posterior_gplvm_standard(self.data, X, self.config, hyper)

    def unpack(self, theta):
        X, hyper = self._split(theta)
        out = {"X": X.copy()}
        if hyper is not None:
            out["kernel_variance"], out["lengthscale"] = np.exp(hyper)
        return out
