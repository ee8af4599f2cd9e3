"""Data-informed starting points for the samplers.

The sign factor in every Householder block makes the map from chain vectors
to ``U`` discontinuous across ``v[0] = 0``. HMC cannot cross such a wall, so
a chain started uniformly at random can settle against it in a spurious
mode. Starting each chain at the spectral solution, with an independent
random sign for every column, keeps chains inside a basin that contains a
true mode while still starting them in different sign configurations.
"""
import numpy as np

from .baselines import fit_ml_ppca
from .gplvm import GplvmHouseholderPosterior, GplvmStandardPosterior
from .householder import chain_from_stiefel
from .linalg import sym_eigen
from .ppca import PpcaHouseholderPosterior, PpcaStandardPosterior
from .priors import ordered_inverse

MIN_GAP = 1e-3


def _strictly_descending(sigma):
    sigma = np.sort(np.maximum(np.asarray(sigma, dtype=np.float64), MIN_GAP))[::-1]
    for q in range(len(sigma) - 2, -1, -1):
        sigma[q] = max(sigma[q], sigma[q + 1] + MIN_GAP)
    return sigma


def _random_signs(Q, rng):
    return np.where(rng.random(Q) < 0.5, -1.0, 1.0)


def _haar_orthogonal(Q, rng):
    q, r = np.linalg.qr(rng.standard_normal((Q, Q)))
    return q * np.sign(np.diag(r))


def _ppca_point(posterior, rng):
    ml = fit_ml_ppca(posterior.data.Y, posterior.Q)
    tail = [ml.mu_ml, [0.5 * np.log(ml.noise_var_ml)]]
    if isinstance(posterior, PpcaHouseholderPosterior):
        sigma = _strictly_descending(ml.sigma)
        U = ml.W_ml / ml.sigma * _random_signs(posterior.Q, rng)
        head = [chain_from_stiefel(U).flat(), ordered_inverse(sigma)]
    else:
        head = [(ml.W_ml @ _haar_orthogonal(posterior.Q, rng)).ravel()]
    return np.concatenate(head + tail)


def _gplvm_point(posterior, rng):
    data, cfg, Q = posterior.data, posterior.config, posterior.Q
    mu = np.zeros(data.N) if cfg.mu is None else np.asarray(cfg.mu, dtype=np.float64)
    eig = sym_eigen(data.scatter_about(mu) / data.D)
    sigma = _strictly_descending(np.sqrt(np.clip(eig.values[:Q], 0.0, None)))
    U = eig.vectors[:, :Q] * _random_signs(Q, rng)
    hyper = [np.zeros(2)] if cfg.sample_kernel else []
    if isinstance(posterior, GplvmHouseholderPosterior):
        head = [chain_from_stiefel(U).flat(), ordered_inverse(sigma)]
    else:
        head = [(U * sigma @ _haar_orthogonal(Q, rng)).ravel()]
    return np.concatenate(head + hyper)


def spectral_inits(posterior, chains, seed=0, jitter=0.1):
    """One starting point per chain, centered on the spectral solution.

    Every point gets independent column signs (or a random rotation for the
    standard models) plus Gaussian jitter with standard deviation
    ``jitter`` on the unconstrained scale.

    Parameters
    ----------
    posterior : PPCA or GP-LVM posterior wrapper with data attached
    chains : int
    seed : int or numpy.random.SeedSequence
    jitter : float
    """
    if getattr(posterior, "data", None) is None:
        raise ValueError("spectral initialization needs data")
    rng = np.random.default_rng(seed)
    if isinstance(posterior, (PpcaHouseholderPosterior, PpcaStandardPosterior)):
        make = _ppca_point
    elif isinstance(posterior, (GplvmHouseholderPosterior, GplvmStandardPosterior)):
        make = _gplvm_point
    else:
        raise TypeError(f"no spectral initialization for {type(posterior).__name__}")
    points = []
    for _ in range(chains):
        theta = make(posterior, rng)
        points.append(theta + jitter * rng.standard_normal(theta.shape))
    return points
