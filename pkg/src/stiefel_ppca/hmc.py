"""Hamiltonian Monte Carlo with step-size and metric adaptation.

The sampler is plain HMC with the number of leapfrog steps drawn uniformly
from ``1..max_leapfrog`` at every transition. During warmup the step size is
tuned by dual averaging (Hoffman and Gelman, 2014) towards
``target_accept``; the inverse metric (dense by default, optionally diagonal)
is re-estimated over expanding windows of warmup draws, and dual averaging
restarts after each update.

Any object with an integer ``dim`` attribute and a ``__call__(theta)``
returning ``(log_density, gradient)`` can be sampled.

Random numbers come from numpy's PCG64 generator. Chain ``i`` of a run with
master seed ``s`` uses ``SeedSequence(s).spawn(chains)[i]``, so results are
reproducible across runs and independent of how chains are scheduled.
"""
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy import optimize
from scipy.linalg import solve_triangular

from .errors import ChainsFailed, Divergence, InitializationFailure, StiefelPPCAError

log = logging.getLogger(__name__)

THREADS_ENV = "STIEFEL_PPCA_THREADS"
CALIBRATION_SKIP = 10


class ModelPosterior(Protocol):
    dim: int

    def __call__(self, theta: np.ndarray) -> tuple: ...


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup: int = 1000
    draws: int = 1000
    target_accept: float = 0.8
    max_leapfrog: int = 32
    seed: int = 0
    init_radius: float = 1.0
    divergence_threshold: float = 1000.0
    # dual averaging constants
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75
    metric: str = "dense"

    def __post_init__(self):
        if self.chains < 1 or self.draws < 0 or self.warmup < 0:
            raise ValueError("chains must be >= 1 and draws/warmup non-negative")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_leapfrog < 1:
            raise ValueError("max_leapfrog must be >= 1")
        if self.metric not in ("diag", "dense"):
            raise ValueError("metric must be 'diag' or 'dense'")


@dataclass
class ChainOutput:
    """Post-warmup output of a single chain.

    ``adapted_mass_diag`` is the diagonal of the mass matrix (the inverse of
    the estimated posterior variances). Divergent transitions leave the chain
    in place: the retained state is stored and ``divergent`` is flagged.
    """

    draws: np.ndarray
    log_densities: np.ndarray
    accept_stats: np.ndarray
    n_leapfrog: np.ndarray
    energy_errors: np.ndarray
    divergent: np.ndarray
    adapted_step_size: float
    adapted_mass_diag: np.ndarray
    chain_id: int = 0
    warmup_divergences: int = 0

    @property
    def divergences(self):
        return int(np.sum(self.divergent))


_EVAL_ERRORS = (StiefelPPCAError, FloatingPointError, np.linalg.LinAlgError, ValueError)


class Metric:
    """Euclidean metric defined by an inverse mass matrix (diagonal or dense).

    Momenta are drawn from ``N(0, M)`` and the kinetic energy is
    ``p^T M^{-1} p / 2``.
    """

    def __init__(self, inv_mass):
        inv_mass = np.asarray(inv_mass, dtype=np.float64)
        self.inv_mass = inv_mass
        self.dense = inv_mass.ndim == 2
        if self.dense:
            self._chol = np.linalg.cholesky(inv_mass)

    @classmethod
    def unit(cls, dim):
        return cls(np.ones(dim))

    def velocity(self, p):
        return self.inv_mass @ p if self.dense else self.inv_mass * p

    def kinetic(self, p):
        # overflow yields inf, which the caller reports as a divergence
        with np.errstate(over="ignore", invalid="ignore"):
            return 0.5 * float(p @ self.velocity(p))

    def sample_momentum(self, rng):
        z = rng.standard_normal(self.inv_mass.shape[0])
        if self.dense:
            return solve_triangular(self._chol, z, lower=True, trans="T")
        return z / np.sqrt(self.inv_mass)

    def mass_diag(self):
        if self.dense:
            return np.diag(np.linalg.inv(self.inv_mass))
        return 1.0 / self.inv_mass


def _evaluate(posterior, q):
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        logp, grad = posterior(q)
    if not np.isfinite(logp) or not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite log density or gradient")
    return logp, grad


def _trajectory(posterior, q, p, step, steps, metric, grad, energies=None):
    """Leapfrog integration; appends the Hamiltonian of every visited state
    to ``energies`` when a list is given."""
    q = q.copy()
    p = p + 0.5 * step * grad
    logp = None
    for i in range(steps):
        q = q + step * metric.velocity(p)
        logp, grad = _evaluate(posterior, q)
        if energies is not None:
            energies.append(-logp + metric.kinetic(p + 0.5 * step * grad))
        if i < steps - 1:
            p = p + step * grad
    p = p + 0.5 * step * grad
    return q, p, logp, grad


def _hamiltonian(logp, p, metric):
    return -logp + metric.kinetic(p)


def leapfrog(posterior, q, p, step, steps, mass_diag=None, divergence_threshold=1000.0):
    """Integrate Hamiltonian dynamics for ``steps`` leapfrog steps.

    Returns ``(q_new, p_new, energy_error)`` with
    ``energy_error = |H(q_new, p_new) - H(q, p)|``.

    Raises
    ------
    Divergence
        If the energy error exceeds ``divergence_threshold`` or the posterior
        fails to evaluate along the trajectory.
    """
    if step <= 0:
        raise ValueError("step size must be positive")
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    metric = Metric.unit(q.shape[0]) if mass_diag is None else Metric(1.0 / np.asarray(mass_diag))
    if steps == 0:
        return q.copy(), p.copy(), 0.0
    logp0, grad0 = _evaluate(posterior, q)
    try:
        q1, p1, logp1, _ = _trajectory(posterior, q, p, step, steps, metric, grad0)
    except _EVAL_ERRORS as exc:
        raise Divergence(np.inf) from exc
    error = abs(_hamiltonian(logp1, p1, metric) - _hamiltonian(logp0, p, metric))
    if not error <= divergence_threshold:
        raise Divergence(error)
    return q1, p1, error


class _DualAveraging:
    def __init__(self, step, target, gamma, t0, kappa):
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.restart(step)

    def restart(self, step):
        self.mu = np.log(10.0 * step)
        self.h_bar = 0.0
        self.log_step_bar = 0.0
        self.m = 0

    def update(self, accept):
        self.m += 1
        m = self.m
        w = 1.0 / (m + self.t0)
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept)
        log_step = self.mu - np.sqrt(m) / self.gamma * self.h_bar
        eta = m ** (-self.kappa)
        self.log_step_bar = eta * log_step + (1.0 - eta) * self.log_step_bar
        return float(np.exp(log_step))

    @property
    def final_step(self):
        return float(np.exp(self.log_step_bar))


def calibrated_log_step(log_steps, accepts, target, fallback):
    """Log step size at which a logistic fit of acceptance hits ``target``.

    Dual-averaging iterates scatter widely and acceptance is concave in the
    log step, so the averaged iterate overshoots the target acceptance. The
    scatter is used here as a design: fit ``expit(a + b x)`` to the
    ``(log step, acceptance)`` pairs by quasi-likelihood and invert it. Falls
    back to ``fallback`` when the fit has no decreasing trend; the answer is
    clipped to the range of observed log steps.
    """
    x = np.asarray(log_steps, dtype=np.float64)
    y = np.clip(np.asarray(accepts, dtype=np.float64), 1e-6, 1.0 - 1e-6)
    if x.size < 10 or np.ptp(x) <= 1e-8:
        return fallback
    center, scale = x.mean(), x.std()

    def loss(theta):
        z = theta[0] + theta[1] * (x - center) / scale
        return float(np.sum(np.logaddexp(0.0, z) - y * z))

    fit = optimize.minimize(loss, np.zeros(2), method="BFGS")
    a, b = fit.x
    if not np.all(np.isfinite(fit.x)) or b >= -1e-8:
        return fallback
    z = np.log(target / (1.0 - target))
    return float(np.clip(center + scale * (z - a) / b, x.min(), x.max()))


def _estimate_metric(samples, kind):
    """Inverse mass from warmup draws, shrunk towards ``1e-3 I``."""
    n = samples.shape[0]
    shrink = n / (n + 5.0)
    if kind == "dense":
        cov = np.atleast_2d(np.cov(samples, rowvar=False))
        return Metric(shrink * cov + 1e-3 * (1.0 - shrink) * np.eye(cov.shape[0]))
    return Metric(shrink * samples.var(axis=0, ddof=1) + 1e-3 * (1.0 - shrink))


def metric_windows(warmup, init_buffer=75, term_buffer=150, base=25):
    """Metric estimation windows ``[(begin, end), ...]`` within warmup.

    After an initial step-size-only buffer, windows double in length; the
    last one absorbs the remainder and stops ``term_buffer`` iterations
    before the end, so for long warmups the final metric comes from roughly
    the second half. Warmups shorter than 100 iterations adapt the step size
    only.
    """
    if warmup < 100:
        return []
    if init_buffer + term_buffer + base > warmup:
        init_buffer, term_buffer = int(0.15 * warmup), int(0.1 * warmup)
        base = warmup - init_buffer - term_buffer
    end_slow = warmup - term_buffer
    windows = []
    begin, size = init_buffer, base
    while begin < end_slow:
        end = begin + size
        if end + 2 * size > end_slow:
            end = end_slow
        windows.append((begin, end))
        begin, size = end, 2 * size
    return windows


class _Sampler:
    def __init__(self, posterior, config, rng):
        self.posterior = posterior
        self.config = config
        self.rng = rng

    def initialize(self, init):
        dim = self.posterior.dim
        r = self.config.init_radius
        base = None if init is None else np.asarray(init, dtype=np.float64)
        for attempt in range(101):
            if base is None:
                q = self.rng.uniform(-r, r, size=dim)
            elif attempt == 0:
                q = base
            else:
                q = base + self.rng.uniform(-r, r, size=dim)
            try:
                logp, grad = _evaluate(self.posterior, q)
                return q, logp, grad
            except _EVAL_ERRORS as exc:
                log.debug("initialization attempt %d failed: %s", attempt, exc)
        raise InitializationFailure("posterior could not be evaluated at 100 jittered initial points")

    def transition(self, q, logp, grad, step, metric):
        """One HMC transition.

        The Metropolis decision uses the trajectory endpoint. The reported
        acceptance statistic, which also drives step-size adaptation, is the
        mean of ``min(1, exp(H0 - H_i))`` over every state of the trajectory;
        it is far less noisy than the endpoint probability alone.
        """
        cfg = self.config
        p = metric.sample_momentum(self.rng)
        steps = int(self.rng.integers(1, cfg.max_leapfrog + 1))
        h0 = _hamiltonian(logp, p, metric)
        energies = []
        try:
            q1, p1, logp1, grad1 = _trajectory(
                self.posterior, q, p, step, steps, metric, grad, energies
            )
            error = _hamiltonian(logp1, p1, metric) - h0
        except _EVAL_ERRORS:
            error = np.inf
        if not np.isfinite(error) or abs(error) > cfg.divergence_threshold:
            return q, logp, grad, 0.0, steps, abs(error), True
        with np.errstate(over="ignore"):
            stat = float(np.mean(np.exp(np.minimum(h0 - np.asarray(energies), 0.0))))
        if self.rng.uniform() < np.exp(min(-error, 0.0)):
            return q1, logp1, grad1, stat, steps, abs(error), False
        return q, logp, grad, stat, steps, abs(error), False

    def initial_step(self, q, logp, grad, metric):
        """Double or halve the step until one-step acceptance crosses 1/2."""
        step = 1.0

        def accept_of(step):
            p = metric.sample_momentum(self.rng)
            try:
                _, p1, logp1, _ = _trajectory(self.posterior, q, p, step, 1, metric, grad)
                delta = _hamiltonian(logp, p, metric) - _hamiltonian(logp1, p1, metric)
            except _EVAL_ERRORS:
                return 0.0
            return float(np.exp(min(delta, 0.0))) if np.isfinite(delta) else 0.0

        a = accept_of(step)
        direction = 1.0 if a > 0.5 else -1.0
        for _ in range(60):
            if (direction > 0 and a <= 0.5) or (direction < 0 and a > 0.5):
                break
            step *= 2.0**direction
            a = accept_of(step)
        return step

    def run(self, init, chain_id):
        cfg = self.config
        dim = self.posterior.dim
        q, logp, grad = self.initialize(init)
        metric = Metric.unit(dim)
        step = self.initial_step(q, logp, grad, metric)
        adapt = _DualAveraging(step, cfg.target_accept, cfg.gamma, cfg.t0, cfg.kappa)

        w = cfg.warmup
        windows = metric_windows(w)
        start = windows[0][0] if windows else w
        ends = {end: begin for begin, end in windows}
        window = []
        trace = []
        warmup_div = 0
        for it in range(w):
            q, logp, grad, accept, _, _, div = self.transition(q, logp, grad, step, metric)
            warmup_div += div
            trace.append((np.log(step), accept))
            step = adapt.update(accept)
            if it >= start:
                window.append(q)
            if it + 1 in ends:
                metric = _estimate_metric(np.asarray(window), cfg.metric)
                window = []
                step = self.initial_step(q, logp, grad, metric)
                adapt.restart(step)
                trace = []
        if w > 0:
            step = adapt.final_step
            # the first iterates after a restart are still searching
            settled = trace[min(CALIBRATION_SKIP, len(trace) // 5):]
            if settled:
                xs, ys = zip(*settled)
                step = float(np.exp(calibrated_log_step(xs, ys, cfg.target_accept, np.log(step))))

        n = cfg.draws
        draws = np.empty((n, dim))
        logps = np.empty(n)
        accepts = np.empty(n)
        n_leap = np.empty(n, dtype=np.int64)
        errors = np.empty(n)
        divergent = np.zeros(n, dtype=bool)
        for i in range(n):
            q, logp, grad, accepts[i], n_leap[i], errors[i], divergent[i] = self.transition(
                q, logp, grad, step, metric
            )
            draws[i] = q
            logps[i] = logp
        return ChainOutput(
            draws=draws,
            log_densities=logps,
            accept_stats=accepts,
            n_leapfrog=n_leap,
            energy_errors=errors,
            divergent=divergent,
            adapted_step_size=step,
            adapted_mass_diag=metric.mass_diag(),
            chain_id=chain_id,
            warmup_divergences=int(warmup_div),
        )


def chain_seeds(seed, chains):
    return np.random.SeedSequence(seed).spawn(chains)


def run_chain(posterior, config, init=None, seed=None, chain_id=0):
    """Run one chain: warmup with adaptation, then ``config.draws`` draws.

    ``seed`` may be an int or a ``numpy.random.SeedSequence``; it defaults to
    ``config.seed``.
    """
    seed = config.seed if seed is None else seed
    rng = np.random.Generator(np.random.PCG64(seed))
    return _Sampler(posterior, config, rng).run(init, chain_id)


def _run_one(args):
    posterior, config, init, seed, chain_id = args
    try:
        return chain_id, run_chain(posterior, config, init, seed, chain_id), None
    except Exception as exc:  # noqa: BLE001 - reported per chain
        return chain_id, None, exc


def max_workers(chains):
    env = os.environ.get(THREADS_ENV)
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(chains, cap))


def run_chains(posterior, config, inits=None, workers=None):
    """Run ``config.chains`` independent chains with seeds spawned from ``config.seed``.

    Chains run in worker processes when more than one worker is available
    (capped by the ``STIEFEL_PPCA_THREADS`` environment variable). Raises
    :class:`ChainsFailed` if any chain raises.
    """
    seeds = chain_seeds(config.seed, config.chains)
    inits = [None] * config.chains if inits is None else list(inits)
    jobs = [(posterior, config, inits[i], seeds[i], i) for i in range(config.chains)]
    workers = max_workers(config.chains) if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]

    outputs = [None] * config.chains
    failures = {}
    for chain_id, out, exc in results:
        outputs[chain_id] = out
        if exc is not None:
            failures[chain_id] = exc
    if failures:
        raise ChainsFailed(failures, outputs)
    return outputs
