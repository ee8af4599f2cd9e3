"""Priors on the Householder parameterization and the ordered transform.

The singular values of a ``D x Q`` matrix with i.i.d. standard normal entries
have the unnormalized joint log density

    -1/2 sum s_q^2 + (D-Q-1) sum log s_q + sum_{q<q'} log|s_q^2 - s_q'^2|
        + sum log(2 s_q)

on the ordered set ``s_1 >= ... >= s_Q > 0``. Normalizing constants are never
computed; every density here is only defined up to an additive constant,
which is all MCMC needs.
"""
import math

import numpy as np

from .errors import DegenerateSpectrum, Overflow

_EXP_MAX = np.log(np.finfo(np.float64).max)
_COLLISION = 1e-300
_LOG2 = math.log(2.0)


def ordered_forward(y):
    """Map unconstrained ``y`` to strictly descending positive values.

    ``s_Q = exp(y_Q)`` and ``s_q = s_{q+1} + exp(y_q)``; the log absolute
    Jacobian determinant of the map is ``sum(y)``.

    Returns
    -------
    sigma : ndarray
        Descending, strictly positive.
    log_jacobian : float
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(y)):
        raise ValueError("ordered transform input must be finite")
    if np.any(y > _EXP_MAX):
        raise Overflow("exp overflow in ordered transform")
    with np.errstate(over="ignore"):
        sigma = np.cumsum(np.exp(y)[::-1])[::-1]
    if not np.isfinite(sigma[0]):
        raise Overflow("overflow in ordered transform")
    return sigma, float(np.sum(y))


def ordered_inverse(sigma):
    """Inverse of :func:`ordered_forward` (log of consecutive gaps)."""
    sigma = np.asarray(sigma, dtype=np.float64).reshape(-1)
    gaps = sigma - np.append(sigma[1:], 0.0)
    if np.any(gaps <= 0):
        raise ValueError("sigma must be strictly descending and positive")
    return np.log(gaps)


def singular_value_log_density(sigma, D, Q):
    """Unnormalized log density of ordered singular values of a Gaussian matrix."""
    return singular_value_log_density_and_grad(sigma, D, Q)[0]


def singular_value_log_density_and_grad(sigma, D, Q):
    sigma = np.asarray(sigma, dtype=np.float64).reshape(-1)
    if sigma.shape != (Q,):
        raise ValueError(f"expected {Q} singular values, got {sigma.shape[0]}")
    if Q > D:
        raise ValueError(f"need Q <= D, got D={D}, Q={Q}")
    if np.any(sigma <= 0):
        raise ValueError("singular values must be strictly positive")

    log_sigma = np.log(sigma)
    value = -0.5 * float(sigma @ sigma) + (D - Q) * float(np.sum(log_sigma)) + Q * _LOG2
    grad = (D - Q) / sigma - sigma

    for q in range(Q - 1):
        for r in range(q + 1, Q):
            gap = (sigma[q] - sigma[r]) * (sigma[q] + sigma[r])
            if abs(gap) < _COLLISION:
                raise DegenerateSpectrum("two singular values coincide")
            value += math.log(abs(gap))
            grad[q] += 2.0 * sigma[q] / gap
            grad[r] -= 2.0 * sigma[r] / gap
    return float(value), grad


def ordered_singular_value_prior(y, D):
    """Singular value prior evaluated on the unconstrained scale.

    Includes the log Jacobian of :func:`ordered_forward`, so the result is a
    proper (unnormalized) log density over ``y``. Returns the value, its
    gradient with respect to ``y`` and the descending singular values.
    """
    sigma, log_jac = ordered_forward(y)
    Q = sigma.shape[0]
    value, grad_sigma = singular_value_log_density_and_grad(sigma, D, Q)
    grad_y = np.exp(y) * np.cumsum(grad_sigma) + 1.0
    return value + log_jac, grad_y, sigma


def gaussian_log_density(v):
    """``-|v|^2 / 2``; the prior on every Householder vector."""
    v = np.asarray(v, dtype=np.float64)
    return -0.5 * float(np.sum(v * v))
