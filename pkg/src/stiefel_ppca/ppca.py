"""Bayesian probabilistic PCA log posteriors.

Two parameterizations of the loading matrix are provided:

* standard: ``W`` is sampled directly under an i.i.d. standard normal prior.
  The posterior inherits the likelihood's rotational symmetry.
* householder: ``W = U diag(sigma)`` where ``U`` comes from a Householder
  chain with standard normal vectors and ``sigma`` follows the singular value
  density of a Gaussian matrix. This defines the same distribution over
  ``W W^T`` but has no continuous rotational degeneracy.

Flat parameter layouts (unconstrained, as seen by the sampler)::

    standard:    [W (row-major, D*Q) | mu (D) | log_noise]
    householder: [v_D | v_{D-1} | ... | v_{D-Q+1} | y_sigma (Q) | mu (D) | log_noise]
"""
from dataclasses import dataclass, field

import numpy as np

from .householder import HouseholderChain, apply_chain, apply_chain_vjp, chain_dim, chain_sizes
from .linalg import as_matrix, cholesky
from .priors import ordered_forward, ordered_singular_value_prior

LOG_2PI = np.log(2.0 * np.pi)


class PpcaData:
    """Observations ``Y`` (N x D) with cached sufficient statistics.

    The likelihood only needs ``sum_n (y_n - mu)(y_n - mu)^T``, which equals
    ``scatter + N (ybar - mu)(ybar - mu)^T`` for any ``mu``; caching the
    scatter about the sample mean makes each evaluation independent of N.
    """

    def __init__(self, Y):
        Y = as_matrix(Y, "Y")
        if Y.shape[0] < 2:
            raise ValueError("need at least 2 observations")
        if Y.shape[1] < 1:
            raise ValueError("need at least 1 feature")
        if not np.all(np.isfinite(Y)):
            raise ValueError("Y contains non-finite entries")
        self.Y = Y
        self.mean = Y.mean(axis=0)
        centered = Y - self.mean
        self.scatter = centered.T @ centered

    @property
    def N(self):
        return self.Y.shape[0]

    @property
    def D(self):
        return self.Y.shape[1]

    def scatter_about(self, mu):
        delta = self.mean - mu
        return self.scatter + self.N * np.outer(delta, delta)


@dataclass(frozen=True)
class PriorConfig:
    """Priors on the mean and noise scale shared by every model.

    ``noise_prior`` is ``"lognormal"`` (normal on ``log sigma_noise`` with
    standard deviation ``noise_scale``) or ``"half-cauchy"`` (on
    ``sigma_noise`` with scale ``noise_scale``).
    """

    mu_mean: float = 0.0
    mu_sd: float = 10.0
    noise_prior: str = "lognormal"
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.noise_prior not in ("lognormal", "half-cauchy"):
            raise ValueError(f"unknown noise prior {self.noise_prior!r}")
        if self.mu_sd <= 0 or self.noise_scale <= 0:
            raise ValueError("prior scales must be positive")

    def mu_log_prior(self, mu):
        z = (mu - self.mu_mean) / self.mu_sd
        return -0.5 * float(z @ z), -z / self.mu_sd

    def log_noise_log_prior(self, log_noise):
        """Log density of ``log sigma_noise`` (Jacobian included) and its derivative."""
        if self.noise_prior == "lognormal":
            z = log_noise / self.noise_scale
            return -0.5 * z * z, -z / self.noise_scale
        r2 = np.exp(2.0 * (log_noise - np.log(self.noise_scale)))
        return -np.log1p(r2) + log_noise, 1.0 - 2.0 * r2 / (1.0 + r2)


def ppca_log_likelihood_and_grad(data, W, mu, noise_var):
    """PPCA log likelihood and its gradients w.r.t. ``W``, ``mu`` and ``noise_var``."""
    W = np.asarray(W, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    N, D = data.N, data.D
    if W.ndim != 2 or W.shape[0] != D:
        raise ValueError(f"W must have {D} rows, got shape {W.shape}")
    if mu.shape != (D,):
        raise ValueError(f"mu must have length {D}")
    if not noise_var > 0:
        raise ValueError("noise variance must be positive")

    K = W @ W.T
    K[np.diag_indices(D)] += noise_var
    chol = cholesky(K, check=False)
    K_inv = chol.inverse()
    S = data.scatter_about(mu)
    K_inv_S = K_inv @ S
    value = -0.5 * N * D * LOG_2PI - 0.5 * N * chol.logdet() - 0.5 * np.trace(K_inv_S)

    dK = 0.5 * (K_inv_S @ K_inv - N * K_inv)
    grad_W = 2.0 * dK @ W
    grad_mu = N * (K_inv @ (data.mean - mu))
    grad_noise_var = float(np.trace(dK))
    return float(value), grad_W, grad_mu, grad_noise_var


def ppca_log_likelihood(data, W, mu, noise_var):
    """``sum_n log N(y_n | mu, W W^T + noise_var I)`` via one Cholesky of K."""
    return ppca_log_likelihood_and_grad(data, W, mu, noise_var)[0]


@dataclass
class PpcaParamsStandard:
    W: np.ndarray
    mu: np.ndarray
    log_noise: float

    @property
    def shape(self):
        return self.W.shape

    def flat(self):
        return np.concatenate([np.ravel(self.W), self.mu, [self.log_noise]])

    @classmethod
    def from_flat(cls, theta, D, Q):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (D * Q + D + 1,):
            raise ValueError(f"expected {D * Q + D + 1} parameters, got {theta.shape}")
        return cls(theta[: D * Q].reshape(D, Q), theta[D * Q : D * Q + D], float(theta[-1]))


@dataclass
class PpcaParamsHouseholder:
    chain: HouseholderChain
    y_sigma: np.ndarray
    mu: np.ndarray
    log_noise: float

    def flat(self):
        return np.concatenate([self.chain.flat(), self.y_sigma, self.mu, [self.log_noise]])

    @classmethod
    def from_flat(cls, theta, D, Q):
        theta = np.asarray(theta, dtype=np.float64)
        nc = chain_dim(D, Q)
        if theta.shape != (nc + Q + D + 1,):
            raise ValueError(f"expected {nc + Q + D + 1} parameters, got {theta.shape}")
        chain = HouseholderChain.from_flat(theta[:nc], D, Q)
        return cls(chain, theta[nc : nc + Q].copy(), theta[nc + Q : nc + Q + D].copy(), float(theta[-1]))

    def sigma(self):
        return ordered_forward(self.y_sigma)[0]


def _noise_terms(data, log_noise, grad_noise_var, prior):
    noise_var = np.exp(2.0 * log_noise)
    lp, dlp = prior.log_noise_log_prior(log_noise)
    grad = dlp
    if data is not None:
        grad += 2.0 * noise_var * grad_noise_var
    return lp, grad


def log_posterior_standard(data, params, prior=PriorConfig()):
    """Unnormalized log posterior under the direct ``W ~ N(0, I)`` prior.

    ``data=None`` drops the likelihood and evaluates the prior alone. Returns
    ``(value, gradient)`` with the gradient in the flat standard layout.
    """
    W = np.asarray(params.W, dtype=np.float64)
    mu = np.asarray(params.mu, dtype=np.float64)
    value = -0.5 * float(np.sum(W * W))
    grad_W = -W.copy()
    mu_lp, grad_mu = prior.mu_log_prior(mu)
    value += mu_lp
    grad_noise_var = 0.0
    if data is not None:
        ll, gW, gmu, grad_noise_var = ppca_log_likelihood_and_grad(
            data, W, mu, np.exp(2.0 * params.log_noise)
        )
        value += ll
        grad_W += gW
        grad_mu = grad_mu + gmu
    noise_lp, grad_log_noise = _noise_terms(data, params.log_noise, grad_noise_var, prior)
    value += noise_lp
    return value, np.concatenate([grad_W.ravel(), grad_mu, [grad_log_noise]])


def log_posterior_householder(data, params, prior=PriorConfig()):
    """Unnormalized log posterior with ``W = U diag(sigma)``.

    Terms: likelihood at ``W``, standard normal density of every chain
    vector, singular value density (with the ordered-transform Jacobian),
    mean prior and noise prior. ``data=None`` evaluates the prior alone.
    """
    chain = params.chain
    D, Q = chain.D, chain.Q
    mu = np.asarray(params.mu, dtype=np.float64)
    y = np.asarray(params.y_sigma, dtype=np.float64)

    flat_v = chain.flat()
    value = -0.5 * float(flat_v @ flat_v)
    grad_v = -flat_v
    sv_lp, grad_y, sigma = ordered_singular_value_prior(y, D)
    value += sv_lp
    mu_lp, grad_mu = prior.mu_log_prior(mu)
    value += mu_lp
    grad_noise_var = 0.0

    if data is not None:
        U, vjp = apply_chain_vjp(chain)
        W = U * sigma
        ll, gW, gmu, grad_noise_var = ppca_log_likelihood_and_grad(
            data, W, mu, np.exp(2.0 * params.log_noise)
        )
        value += ll
        grad_v = grad_v + vjp(gW * sigma)
        grad_sigma = np.sum(gW * U, axis=0)
        grad_y = grad_y + np.exp(y) * np.cumsum(grad_sigma)
        grad_mu = grad_mu + gmu

    noise_lp, grad_log_noise = _noise_terms(data, params.log_noise, grad_noise_var, prior)
    value += noise_lp
    return value, np.concatenate([grad_v, grad_y, grad_mu, [grad_log_noise]])


@dataclass
class PpcaStandardPosterior:
    """Sampler-facing wrapper for :func:`log_posterior_standard`."""

    data: PpcaData
    Q: int
    prior: PriorConfig = field(default_factory=PriorConfig)
    D: int = None

    def __post_init__(self):
        if self.D is None:
            if self.data is None:
                raise ValueError("D is required when data is None")
            self.D = self.data.D
        if not 1 <= self.Q <= self.D:
            raise ValueError(f"need 1 <= Q <= D, got Q={self.Q}, D={self.D}")

    @property
    def dim(self):
        return self.D * self.Q + self.D + 1

    def __call__(self, theta):
        params = PpcaParamsStandard.from_flat(theta, self.D, self.Q)
        return log_posterior_standard(self.data, params, self.prior)

    def unpack(self, theta):
        p = PpcaParamsStandard.from_flat(theta, self.D, self.Q)
        return {"W": p.W.copy(), "mu": p.mu.copy(), "sigma_noise": float(np.exp(p.log_noise))}


@dataclass
class PpcaHouseholderPosterior:
    """Sampler-facing wrapper for :func:`log_posterior_householder`."""

    data: PpcaData
    Q: int
    prior: PriorConfig = field(default_factory=PriorConfig)
    D: int = None

    def __post_init__(self):
        if self.D is None:
            if self.data is None:
                raise ValueError("D is required when data is None")
            self.D = self.data.D
        chain_sizes(self.D, self.Q)

    @property
    def dim(self):
        return chain_dim(self.D, self.Q) + self.Q + self.D + 1

    def __call__(self, theta):
        params = PpcaParamsHouseholder.from_flat(theta, self.D, self.Q)
        return log_posterior_householder(self.data, params, self.prior)

    def unpack(self, theta):
        p = PpcaParamsHouseholder.from_flat(theta, self.D, self.Q)
        U = apply_chain(p.chain)
        sigma = p.sigma()
        return {
            "U": U,
            "sigma": sigma,
            "W": U * sigma,
            "mu": p.mu.copy(),
            "sigma_noise": float(np.exp(p.log_noise)),
        }
