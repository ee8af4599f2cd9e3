"""Convergence diagnostics, sign-convention postprocessing and summaries."""
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .errors import AmbiguousSignWarning, DegenerateChainWarning
from .linalg import sym_eigen

SIGN_FLOOR = 1e-12


def fix_signs(U, sigma=None):
    """Flip columns of ``U`` so that every first entry is positive.

    Columns whose first entry has magnitude below ``1e-12`` are left alone
    and reported through an :class:`AmbiguousSignWarning`. ``sigma`` is
    accepted for symmetry with the draw layout and is never modified.

    Returns
    -------
    U_fixed : ndarray
    flip_mask : ndarray of bool
        True where a column was negated.
    """
    U = np.asarray(U, dtype=np.float64)
    first = U[0]
    ambiguous = np.abs(first) < SIGN_FLOOR
    if np.any(ambiguous):
        warnings.warn(
            f"columns {np.nonzero(ambiguous)[0].tolist()} have a near-zero first entry",
            AmbiguousSignWarning,
            stacklevel=2,
        )
    flip = (first < 0) & ~ambiguous
    return np.where(flip, -U, U), flip


def _as_chains(draws, index=None):
    draws = np.asarray(draws, dtype=np.float64)
    if draws.ndim == 3:
        if index is None:
            raise ValueError("a parameter index is required for 3-D draws")
        draws = draws[:, :, index]
    elif draws.ndim == 1:
        draws = draws[None, :]
    elif draws.ndim != 2:
        raise ValueError("draws must have shape (chains, draws[, params])")
    return draws


def _split(chains):
    n = chains.shape[1] // 2
    return np.concatenate([chains[:, :n], chains[:, -n:]], axis=0)


def split_rhat(draws, index=None):
    """Split-chain potential scale reduction factor.

    ``draws`` has shape ``(chains, draws)`` or ``(chains, draws, params)``
    with ``index`` selecting a parameter. Each chain is cut in half and the
    classic between/within variance ratio is computed on the halves.
    """
    chains = _as_chains(draws, index)
    if chains.shape[1] < 4:
        return float("nan")
    halves = _split(chains)
    n = halves.shape[1]
    within = np.mean(np.var(halves, axis=1, ddof=1))
    between = n * np.var(np.mean(halves, axis=1), ddof=1)
    if within == 0.0:
        return 1.0 if between == 0.0 else float("inf")
    var_plus = (n - 1) / n * within + between / n
    return float(np.sqrt(var_plus / within))


def _autocov(x):
    n = x.shape[-1]
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    centered = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(centered, size, axis=-1)
    acov = np.fft.irfft(f * np.conjugate(f), size, axis=-1)[..., :n]
    return acov / n


def _ess(chains):
    m, n = chains.shape
    acov = _autocov(chains)
    chain_mean = chains.mean(axis=1)
    mean_var = np.mean(acov[:, 0]) * n / (n - 1.0)
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += np.var(chain_mean, ddof=1)
    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0

    # Geyer's initial positive sequence of paired sums, made monotone
    pairs = []
    t = 0
    while t + 1 < n:
        p = rho[t] + rho[t + 1]
        if p < 0:
            break
        pairs.append(p)
        t += 2
    pairs = np.minimum.accumulate(np.asarray(pairs)) if pairs else np.array([1.0])
    tau = -1.0 + 2.0 * np.sum(pairs)
    tau = max(tau, 1.0 / np.log10(m * n)) if m * n > 1 else 1.0
    return min(m * n / tau, float(m * n))


def _rank_normalize(chains):
    ranks = stats.rankdata(chains, method="average").reshape(chains.shape)
    return stats.norm.ppf((ranks - 0.375) / (chains.size + 0.25))


def ess_bulk(draws, index=None):
    """Bulk effective sample size on rank-normalized split chains.

    Uses FFT autocovariances and Geyer's initial monotone sequence
    truncation. The result is capped at the total number of draws. A chain
    with zero variance has no defined ESS: 0 is returned together with a
    :class:`DegenerateChainWarning`.
    """
    chains = _as_chains(draws, index)
    if np.all(chains == chains.flat[0]):
        warnings.warn("constant chain; ESS reported as 0", DegenerateChainWarning, stacklevel=2)
        return 0.0
    if chains.shape[1] < 4:
        return float("nan")
    return _ess(_rank_normalize(_split(chains)))


@dataclass
class PosteriorSummary:
    mean: float
    sd: float
    q2_5: float
    q50: float
    q97_5: float
    rhat: float
    ess: float

    def to_dict(self):
        return {k: float(v) for k, v in asdict(self).items()}


def summarize_array(samples, names):
    """Summaries for every column of ``samples`` shaped ``(chains, draws, k)``."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 3 or samples.shape[2] != len(names):
        raise ValueError("samples must have shape (chains, draws, len(names))")
    flat = samples.reshape(-1, samples.shape[2])
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateChainWarning)
        for j, name in enumerate(names):
            col = flat[:, j]
            q = np.quantile(col, [0.025, 0.5, 0.975])
            out[name] = PosteriorSummary(
                mean=float(col.mean()),
                sd=float(col.std(ddof=1)) if col.size > 1 else 0.0,
                q2_5=float(q[0]),
                q50=float(q[1]),
                q97_5=float(q[2]),
                rhat=split_rhat(samples[:, :, j]),
                ess=ess_bulk(samples[:, :, j]),
            )
    return out


def _singular_values(W):
    values = sym_eigen(W.T @ W).values
    return np.sqrt(np.clip(values, 0.0, None))


def derived_quantities(posterior, theta):
    """Sign-fixed, reportable quantities of one draw as ``(values, names)``.

    PPCA models yield ``W`` (row-major), ``sigma``, ``mu`` and
    ``sigma_noise``; GP-LVM models yield ``X`` and ``sigma``. For the
    Householder models ``W`` (or ``X``) is rebuilt from the sign-fixed ``U``;
    for the standard models ``sigma`` are the singular values of the draw.
    """
    parts = posterior.unpack(theta)
    if "U" in parts:
        U, _ = fix_signs(parts["U"])
        sigma = parts["sigma"]
        mat = U * sigma
    else:
        mat = parts["W"] if "W" in parts else parts["X"]
        sigma = _singular_values(mat)
    label = "W" if "mu" in parts else "X"
    rows, cols = mat.shape
    names = [f"{label}_{i}_{j}" for i in range(rows) for j in range(cols)]
    names += [f"sigma_{q + 1}" for q in range(cols)]
    values = [mat.ravel(), sigma]
    if "mu" in parts:
        names += [f"mu_{d + 1}" for d in range(rows)] + ["sigma_noise"]
        values += [parts["mu"], [parts["sigma_noise"]]]
    for key in ("kernel_variance", "lengthscale"):
        if key in parts:
            names.append(key)
            values.append([parts[key]])
    return np.concatenate(values), names


def derived_draws(posterior, chains):
    """Apply :func:`derived_quantities` to every draw of every chain.

    Returns an array of shape ``(chains, draws, k)`` and the ``k`` names.
    """
    names = None
    per_chain = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AmbiguousSignWarning)
        for out in chains:
            rows = []
            for theta in out.draws:
                values, names = derived_quantities(posterior, theta)
                rows.append(values)
            per_chain.append(rows)
    return np.asarray(per_chain), names


def summarize(chains, posterior):
    """Posterior summaries of the sign-fixed derived quantities."""
    samples, names = derived_draws(posterior, chains)
    return summarize_array(samples, names)
