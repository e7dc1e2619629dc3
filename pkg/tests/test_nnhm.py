import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.integrate import quad

from metareg import (
    DesignMatrix,
    NormalPrior,
    RegressionProblem,
    StudyDataset,
    TauPrior,
    conditional_beta_posterior,
    conditional_marginal_likelihood,
    marginal_likelihood,
    tau_log_marginal_unnorm,
)
from metareg.nnhm import Kernel, NonNormalizableError, TauPosterior

from conftest import random_problem
from oracle import TauOracle, conditional_dense, log_marginal_dense


def scalar(y, sigma, beta_prior=None, tau_prior=None):
    ds = StudyDataset(["s"], [y], [sigma])
    return RegressionProblem(ds, None, tau_prior or TauPrior.half_normal(1.0), beta_prior or NormalPrior([0.0], [[1.0]]))


def test_crins_conditional_at_zero(crins_problem):
    m = conditional_beta_posterior(crins_problem, 0.0)
    np.testing.assert_allclose(m.mean, [-1.2877, -2.3074], atol=0.005)


def test_single_observation_flat_prior():
    ds = StudyDataset(["s"], [0.7], [0.4])
    p = RegressionProblem(ds, None, TauPrior.half_normal(1.0))
    for tau in (0.0, 0.3, 2.0):
        m = conditional_beta_posterior(p, tau)
        assert m.mean[0] == pytest.approx(0.7)
        assert m.covariance[0, 0] == pytest.approx(0.16 + tau**2)


def test_scalar_conjugate_update():
    m = conditional_beta_posterior(scalar(1.0, 1.0), 0.0)
    assert m.mean[0] == pytest.approx(0.5)
    assert m.covariance[0, 0] == pytest.approx(0.5)


def test_saturated_marginal_is_prior():
    ds = StudyDataset(["s"], [0.3], [0.5])
    prior = TauPrior.half_cauchy(0.7)
    p = RegressionProblem(ds, None, prior)
    tau = np.array([0.0, 0.2, 1.0, 5.0])
    diff = tau_log_marginal_unnorm(p, tau) - prior.logpdf(tau)
    np.testing.assert_allclose(diff - diff[0], 0.0, atol=1e-12)


def test_density_ratio_against_oracle(crins_problem):
    a, b = 0.2975, 0.9
    ours = tau_log_marginal_unnorm(crins_problem, a) - tau_log_marginal_unnorm(crins_problem, b)
    ref = (log_marginal_dense(crins_problem, a) + stats.halfnorm.logpdf(a, scale=0.5)
           - log_marginal_dense(crins_problem, b) - stats.halfnorm.logpdf(b, scale=0.5))
    assert np.exp(ours - ref) == pytest.approx(1.0, rel=1e-6)


def test_vague_normal_matches_flat(crins_problem):
    vague = crins_problem.replace(beta_prior=NormalPrior(np.zeros(2), 1e8 * np.eye(2)))
    tau = np.array([0.0, 0.1, 0.5, 1.5])
    flat = tau_log_marginal_unnorm(crins_problem, tau)
    norm = tau_log_marginal_unnorm(vague, tau)
    np.testing.assert_allclose(np.diff(flat), np.diff(norm), atol=1e-4)


def test_conditional_marginal_scalar_cases():
    p = scalar(0.0, 1.0)
    assert conditional_marginal_likelihood(p, 0.0) == pytest.approx(0.28209, abs=5e-6)
    assert conditional_marginal_likelihood(p, 1.0) == pytest.approx(0.23033, abs=5e-6)


def test_conditional_marginal_needs_proper(crins_problem):
    with pytest.raises(ValueError):
        conditional_marginal_likelihood(crins_problem, 0.1)
    with pytest.raises(ValueError):
        marginal_likelihood(crins_problem)


def test_permutation_invariance(rng):
    p = random_problem(rng, k=6, d=2, proper=True)
    perm = rng.permutation(6)
    ds = p.dataset
    q = RegressionProblem(
        StudyDataset([ds.labels[i] for i in perm], ds.y[perm], ds.sigma[perm]),
        DesignMatrix(p.design.entries[perm], p.design.column_names), p.tau_prior, p.beta_prior,
    )
    for tau in (0.0, 0.4):
        assert conditional_marginal_likelihood(q, tau) == pytest.approx(
            conditional_marginal_likelihood(p, tau), rel=1e-12)


def test_point_mass_prior():
    ds = StudyDataset(["a", "b", "c"], [0.1, -0.4, 0.9], [0.5, 0.6, 0.4])
    p = RegressionProblem(ds, None, TauPrior.half_normal(1e-9), NormalPrior([0.0], [[1.0]]))
    assert marginal_likelihood(p) == pytest.approx(conditional_marginal_likelihood(p, 0.0), rel=1e-6)


def test_marginal_likelihood_oracle():
    ds = StudyDataset(["a", "b"], [0.0, 0.0], [1.0, 1.0])
    p = RegressionProblem(ds, None, TauPrior.half_normal(0.5), NormalPrior([0.0], [[1.0]]))
    ref = TauOracle(p, n=100_000)
    assert marginal_likelihood(p) == pytest.approx(np.exp(ref.log_norm), rel=1e-6)


def test_bayes_identity(rng):
    for _ in range(10):
        p = random_problem(rng, proper=True)
        X, y, s = p.design.entries, p.dataset.y, p.dataset.sigma
        tau = float(rng.uniform(0, 1.5))
        beta = rng.normal(0, 1, p.d)
        post = conditional_beta_posterior(p, tau)
        lhs = np.log(conditional_marginal_likelihood(p, tau)) + post.logpdf(beta)
        rhs = (stats.multivariate_normal(p.beta_prior.mean, p.beta_prior.covariance).logpdf(beta)
               + stats.norm.logpdf(y, X @ beta, np.sqrt(s**2 + tau**2)).sum())
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def test_moments_match_dense(rng):
    for proper in (True, False):
        p = random_problem(rng, k=7, d=3, proper=proper)
        for tau in (0.0, 0.25, 3.0):
            m = conditional_beta_posterior(p, tau)
            mean, cov = conditional_dense(p, tau)
            np.testing.assert_allclose(m.mean, mean, rtol=1e-9, atol=1e-12)
            np.testing.assert_allclose(m.covariance, cov, rtol=1e-9, atol=1e-12)
            np.linalg.cholesky(m.covariance)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 2), st.floats(0, 3), st.integers(0, 2**31))
def test_adding_study_shrinks_covariance(y_new, s_new, tau, seed):
    rng = np.random.default_rng(seed)
    p = random_problem(rng, k=5, d=2, proper=False)
    ds = p.dataset
    bigger = RegressionProblem(
        StudyDataset(list(ds.labels) + ["new"], np.r_[ds.y, y_new], np.r_[ds.sigma, s_new]),
        DesignMatrix(np.vstack([p.design.entries, [1.0, rng.normal()]]), p.design.column_names),
        p.tau_prior,
    )
    before = np.linalg.det(conditional_beta_posterior(p, tau).covariance)
    after = np.linalg.det(conditional_beta_posterior(bigger, tau).covariance)
    assert after <= before * (1 + 1e-10)


def test_tau_posterior_normalized(crins_problem):
    post = TauPosterior(Kernel(crins_problem))
    total, _ = quad(post.pdf, 0, np.inf, limit=200)
    assert total == pytest.approx(1.0, abs=1e-6)
    for p in (0.01, 0.3, 0.5, 0.9, 0.999):
        assert post.cdf(post.quantile(p)) == pytest.approx(p, abs=1e-8)


def test_tau_posterior_matches_oracle(crins_problem):
    post = TauPosterior(Kernel(crins_problem))
    ref = TauOracle(crins_problem, n=20_000)
    assert post.mean == pytest.approx(ref.weights @ ref.tau, abs=1e-4)
    cdf = np.cumsum(ref.weights)
    assert post.quantile(0.5) == pytest.approx(np.interp(0.5, cdf, ref.tau), abs=1e-3)


def test_non_normalizable():
    ds = StudyDataset(["a", "b"], [0.0, 1.0], [1.0, 1.0])
    p = RegressionProblem(ds, DesignMatrix(np.array([[1.0], [1.0]]), ["i"]), TauPrior.uniform())
    with pytest.raises((NonNormalizableError, ValueError)):
        TauPosterior(Kernel(p))


def test_mvn_moments_logpdf():
    from metareg import MvnMoments

    m = MvnMoments([0.0, 1.0], [[2.0, 0.5], [0.5, 1.0]])
    x = np.array([0.3, -0.2])
    assert m.logpdf(x) == pytest.approx(stats.multivariate_normal([0, 1], m.covariance).logpdf(x))
