import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from conftest import central_difference, relative_error
from stiefel_ppca.householder import HouseholderChain, apply_chain, chain_from_stiefel
from stiefel_ppca.hmc import SamplerConfig, run_chains
from stiefel_ppca.linalg import qr_of_gaussian, sym_eigen
from stiefel_ppca.ppca import (
    PpcaData,
    PpcaHouseholderPosterior,
    PpcaParamsHouseholder,
    PpcaParamsStandard,
    PpcaStandardPosterior,
    PriorConfig,
    log_posterior_householder,
    log_posterior_standard,
    ppca_log_likelihood,
)


def eig_mvn_loglik(Y, mu, K):
    """Sum of per-row Gaussian log densities from an eigendecomposition of K."""
    e = sym_eigen(K)
    Z = (Y - mu) @ e.vectors
    D = K.shape[0]
    quad = np.sum(Z * Z / e.values, axis=1)
    return float(np.sum(-0.5 * (D * math.log(2 * math.pi) + np.sum(np.log(e.values)) + quad)))


def random_problem(rng, N=10, D=5, Q=2):
    Y = rng.standard_normal((N, D))
    return PpcaData(Y), rng.standard_normal((D, Q)), rng.standard_normal(D)


class TestLikelihood:
    def test_standard_normal_at_zero(self):
        data = PpcaData(np.zeros((2, 1)))
        value = ppca_log_likelihood(data, np.zeros((1, 1)), np.zeros(1), 1.0)
        assert value == pytest.approx(-math.log(2 * math.pi))

    def test_matches_eigen_oracle(self, rng):
        data, W, mu = random_problem(rng, N=6, D=3, Q=2)
        K = W @ W.T + 0.3 * np.eye(3)
        assert ppca_log_likelihood(data, W, mu, 0.3) == pytest.approx(
            eig_mvn_loglik(data.Y, mu, K), abs=1e-9
        )

    def test_matches_scipy(self, rng):
        data, W, mu = random_problem(rng)
        K = W @ W.T + 0.5 * np.eye(5)
        expected = stats.multivariate_normal(mu, K).logpdf(data.Y).sum()
        assert abs(ppca_log_likelihood(data, W, mu, 0.5) - expected) < 1e-10

    @given(st.integers(0, 2**31), st.integers(1, 4))
    def test_rotation_invariance(self, seed, Q):
        r = np.random.default_rng(seed)
        data, W, mu = random_problem(r, Q=Q)
        R = qr_of_gaussian(Q, Q, r)
        a = ppca_log_likelihood(data, W, mu, 0.2)
        b = ppca_log_likelihood(data, W @ R, mu, 0.2)
        assert abs(a - b) < 1e-8 * abs(a)

    def test_rejects_bad_inputs(self, rng):
        data, W, mu = random_problem(rng)
        with pytest.raises(ValueError):
            ppca_log_likelihood(data, W, mu, 0.0)
        with pytest.raises(ValueError):
            ppca_log_likelihood(data, W[:3], mu, 1.0)
        with pytest.raises(ValueError):
            PpcaData(np.ones((1, 3)))
        with pytest.raises(ValueError):
            PpcaData(np.array([[1.0, np.nan], [0.0, 0.0]]))


PRIORS = [PriorConfig(), PriorConfig(noise_prior="half-cauchy", noise_scale=0.7, mu_sd=3.0)]


class TestStandardPosterior:
    @pytest.mark.parametrize("prior", PRIORS)
    def test_gradient(self, rng, prior):
        data, _, _ = random_problem(rng)
        post = PpcaStandardPosterior(data, 2, prior)
        for _ in range(5):
            theta = rng.standard_normal(post.dim)
            _, grad = post(theta)
            numeric = central_difference(lambda t: post(t)[0], theta)
            assert np.max(relative_error(grad, numeric)) < 1e-6

    def test_prior_only_maximized_at_zero(self, rng):
        post = PpcaStandardPosterior(None, 2, D=4)
        theta = np.zeros(post.dim)
        value, grad = post(theta)
        np.testing.assert_allclose(grad[:8], 0.0)
        for _ in range(20):
            other = theta.copy()
            other[:8] = rng.standard_normal(8)
            assert post(other)[0] < value

    def test_components(self, rng):
        data, W, mu = random_problem(rng)
        params = PpcaParamsStandard(W, mu, -0.4)
        value, _ = log_posterior_standard(data, params)
        expected = (
            ppca_log_likelihood(data, W, mu, math.exp(-0.8))
            - 0.5 * np.sum(W * W)
            - 0.5 * np.sum((mu / 10.0) ** 2)
            - 0.5 * 0.4**2
        )
        assert value == pytest.approx(expected, abs=1e-10)

    def test_flat_round_trip(self, rng):
        p = PpcaParamsStandard(rng.standard_normal((5, 2)), rng.standard_normal(5), 0.3)
        q = PpcaParamsStandard.from_flat(p.flat(), 5, 2)
        np.testing.assert_array_equal(q.W, p.W)
        np.testing.assert_array_equal(q.mu, p.mu)

    def test_requires_dimension_without_data(self):
        with pytest.raises(ValueError):
            PpcaStandardPosterior(None, 2)


class TestHouseholderPosterior:
    @pytest.mark.parametrize("prior", PRIORS)
    def test_gradient_at_random_points(self, rng, prior):
        data, _, _ = random_problem(rng, N=10, D=5, Q=2)
        post = PpcaHouseholderPosterior(data, 2, prior)
        for _ in range(20):
            theta = rng.standard_normal(post.dim)
            _, grad = post(theta)
            numeric = central_difference(lambda t: post(t)[0], theta)
            assert np.max(relative_error(grad, numeric)) < 1e-6

    @pytest.mark.parametrize("D,Q", [(3, 3), (6, 1), (7, 4)])
    def test_gradient_other_shapes(self, rng, D, Q):
        data = PpcaData(rng.standard_normal((12, D)))
        post = PpcaHouseholderPosterior(data, Q)
        theta = rng.standard_normal(post.dim)
        numeric = central_difference(lambda t: post(t)[0], theta)
        assert np.max(relative_error(post(theta)[1], numeric)) < 1e-6

    def test_prior_only_gradient(self, rng):
        post = PpcaHouseholderPosterior(None, 2, D=5)
        theta = rng.standard_normal(post.dim)
        numeric = central_difference(lambda t: post(t)[0], theta)
        assert np.max(relative_error(post(theta)[1], numeric)) < 1e-6

    def test_likelihood_path_matches(self, rng):
        data, _, mu = random_problem(rng)
        chain = HouseholderChain.random(5, 2, rng)
        y = rng.standard_normal(2)
        params = PpcaParamsHouseholder(chain, y, mu, 0.1)
        with_data = log_posterior_householder(data, params)[0]
        prior_only = log_posterior_householder(None, params)[0]
        W = apply_chain(chain) * params.sigma()
        assert with_data - prior_only == pytest.approx(
            ppca_log_likelihood(data, W, mu, math.exp(0.2)), abs=1e-10
        )

    def test_column_sign_flip_invariance(self, rng):
        data, _, mu = random_problem(rng)
        U = qr_of_gaussian(5, 2, rng)
        norms = [2.0, 1.5]
        y = rng.standard_normal(2)
        base = PpcaParamsHouseholder(chain_from_stiefel(U, norms), y, mu, -0.3)
        for signs in ([-1, 1], [1, -1], [-1, -1]):
            flipped = PpcaParamsHouseholder(chain_from_stiefel(U * signs, norms), y, mu, -0.3)
            np.testing.assert_allclose(
                apply_chain(flipped.chain) @ apply_chain(flipped.chain).T,
                U @ U.T,
                atol=1e-12,
            )
            assert log_posterior_householder(data, flipped)[0] == pytest.approx(
                log_posterior_householder(data, base)[0], abs=1e-9
            )

    def test_unpack(self, rng):
        data, _, _ = random_problem(rng)
        post = PpcaHouseholderPosterior(data, 2)
        parts = post.unpack(rng.standard_normal(post.dim))
        np.testing.assert_allclose(parts["U"].T @ parts["U"], np.eye(2), atol=1e-12)
        np.testing.assert_allclose(parts["W"], parts["U"] * parts["sigma"])
        assert parts["sigma"][0] > parts["sigma"][1] > 0
        assert parts["sigma_noise"] > 0

    def test_layout(self, rng):
        post = PpcaHouseholderPosterior(None, 2, D=5)
        assert post.dim == 5 + 4 + 2 + 5 + 1
        theta = np.arange(post.dim, dtype=float) / 10 + 0.05
        p = PpcaParamsHouseholder.from_flat(theta, 5, 2)
        np.testing.assert_array_equal(p.chain.vs[0], theta[:5])
        np.testing.assert_array_equal(p.chain.vs[1], theta[5:9])
        np.testing.assert_array_equal(p.y_sigma, theta[9:11])
        np.testing.assert_array_equal(p.mu, theta[11:16])
        assert p.log_noise == theta[16]
        np.testing.assert_array_equal(p.flat(), theta)


def test_standard_posterior_traces_rotation_circles():
    # 50 points, D=5, Q=2, W with standard normal entries; the Gram matrix
    # of each draw is stable while W itself wanders around the orbit
    rng = np.random.default_rng(3)
    W_true = rng.standard_normal((5, 2))
    Y = rng.standard_normal((50, 2)) @ W_true.T + 0.1 * rng.standard_normal((50, 5))
    post = PpcaStandardPosterior(PpcaData(Y), 2)
    outs = run_chains(post, SamplerConfig(chains=2, warmup=500, draws=500, seed=1), workers=1)
    W = np.concatenate([o.draws[:, :10] for o in outs]).reshape(-1, 5, 2)
    gram_eigs = np.array([np.linalg.eigvalsh(w.T @ w) for w in W])
    entry_spread = W.reshape(len(W), -1).std(axis=0).mean()
    eig_spread = (gram_eigs.std(axis=0) / gram_eigs.mean(axis=0)).mean()
    assert eig_spread < 0.25 * entry_spread
