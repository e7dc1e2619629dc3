"""Brute-force reference computations, independent of the package internals.

Dense k-by-k algebra and trapezoid quadrature on the compactified axis
tau = u / (1 - u), so heavy-tailed posteriors are covered on a finite grid.
"""

import numpy as np
from scipy import stats
from scipy.optimize import brentq
from scipy.special import logsumexp


def log_prior_tau(prior, tau):
    fam, par = prior.family, prior.params
    tau = np.asarray(tau, dtype=float)
    if fam == "half_normal":
        return stats.halfnorm.logpdf(tau, scale=par[0])
    if fam == "half_cauchy":
        return stats.halfcauchy.logpdf(tau, scale=par[0])
    if fam == "exponential":
        return stats.expon.logpdf(tau, scale=1.0 / par[0])
    if fam == "uniform":
        return np.zeros_like(tau)
    return np.log(np.maximum(prior.pdf(tau), 1e-300))


def log_marginal_dense(problem, tau):
    """log p(y | tau), unnormalized for a flat coefficient prior.

    Accepts a scalar or an array of tau; the algebra is batched dense k-by-k.
    """
    scalar = np.ndim(tau) == 0
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    y, s = problem.dataset.y, problem.dataset.sigma
    X = problem.design.entries
    k = y.size
    var = s[None, :] ** 2 + tau[:, None] ** 2
    bp = problem.beta_prior
    if bp.proper:
        M = np.einsum("ij,jl,ml->im", X, bp.covariance, X)[None] + var[:, :, None] * np.eye(k)
        r = y - X @ bp.mean
        sol = np.linalg.solve(M, np.broadcast_to(r, (tau.size, k))[..., None])[..., 0]
        out = -0.5 * (k * np.log(2 * np.pi) + np.linalg.slogdet(M)[1] + sol @ r)
    else:
        w = 1.0 / var
        P = np.einsum("ti,ij,il->tjl", w, X, X)
        b = np.einsum("ti,ij,i->tj", w, X, y)
        quad_form = (w * y**2).sum(axis=1) - np.einsum(
            "tj,tj->t", b, np.linalg.solve(P, b[..., None])[..., 0])
        out = -0.5 * (np.log(var).sum(axis=1) + np.linalg.slogdet(P)[1] + quad_form)
    return float(out[0]) if scalar else out


def conditional_dense(problem, tau):
    y, s = problem.dataset.y, problem.dataset.sigma
    X = problem.design.entries
    Si = np.diag(1.0 / (s**2 + tau**2))
    P = X.T @ Si @ X
    b = X.T @ Si @ y
    bp = problem.beta_prior
    if bp.proper:
        P0 = np.linalg.inv(bp.covariance)
        P = P + P0
        b = b + P0 @ bp.mean
    cov = np.linalg.inv(P)
    return cov @ b, cov


class TauOracle:
    """Trapezoid rule with ``n`` nodes on u in [0, 1)."""

    def __init__(self, problem, n=10_000, scale=None):
        self.problem = problem
        scale = float(np.median(problem.dataset.sigma)) if scale is None else scale
        u = np.linspace(0.0, 1.0, n + 1)[:-1]
        tau = scale * u / (1.0 - u)
        jac = scale / (1.0 - u) ** 2
        logf = log_marginal_dense(problem, tau)
        logf = logf + log_prior_tau(problem.tau_prior, tau) + np.log(jac)
        logw = logf + np.log(np.r_[0.5, np.ones(n - 1)] / n)
        self.tau = tau
        self.log_norm = float(logsumexp(logw))
        self.weights = np.exp(logw - self.log_norm)

    def moments(self):
        y, s = self.problem.dataset.y, self.problem.dataset.sigma
        X = self.problem.design.entries
        w = 1.0 / (s[None, :] ** 2 + self.tau[:, None] ** 2)
        P = np.einsum("ti,ij,il->tjl", w, X, X)
        b = np.einsum("ti,ij,i->tj", w, X, y)
        bp = self.problem.beta_prior
        if bp.proper:
            P0 = np.linalg.inv(bp.covariance)
            P = P + P0
            b = b + P0 @ bp.mean
        cov = np.linalg.inv(P)
        return np.einsum("tjl,tl->tj", cov, b), cov

    def combination(self, x, mean=True):
        m, c = self.moments()
        x = np.asarray(x, dtype=float)
        mu = m @ x
        var = np.einsum("i,nij,j->n", x, c, x)
        if not mean:
            var = var + self.tau**2
        return self.weights, mu, np.sqrt(var)


def mixture_quantile(weights, means, sds, p):
    keep = weights > 0
    w, m, s = weights[keep], means[keep], sds[keep]

    def cdf(v):
        return float(w @ stats.norm.cdf((v - m) / s)) - p

    lo, hi = float((m - 40 * s).min()), float((m + 40 * s).max())
    return brentq(cdf, lo, hi, xtol=1e-12)
