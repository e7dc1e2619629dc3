"""Closed-form kernels of the normal-normal hierarchical regression model.

For fixed heterogeneity ``tau`` the marginal model is
``y ~ N(X beta, diag(sigma^2 + tau^2))``, so the coefficient posterior is
multivariate normal and ``beta`` integrates out analytically.  Everything
here works on the d x d precision ``X' W X`` with ``W`` diagonal, which
keeps each evaluation at O(k d^2).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import PchipInterpolator

from metareg.model import (
    ImproperUniform,
    NormalPrior,
    RegressionProblem,
    ValidationError,
)

_LOG2PI = np.log(2.0 * np.pi)
# Relative density level at which the tau integration range is truncated.
_TAIL_LOG_RATIO = np.log(1e-12)
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


class NonNormalizableError(ValidationError):
    """The heterogeneity posterior has infinite mass."""


@dataclass(frozen=True, eq=False)
class MvnMoments:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float)
        cov = 0.5 * (cov + cov.T)
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "covariance", cov)

    @property
    def d(self) -> int:
        return self.mean.size

    def logpdf(self, beta) -> float:
        L = np.linalg.cholesky(self.covariance)
        z = np.linalg.solve(L, np.asarray(beta, dtype=float) - self.mean)
        return float(-0.5 * (self.d * _LOG2PI + z @ z) - np.log(np.diag(L)).sum())


class Kernel:
    """Vectorized conditional computations for one validated problem."""

    def __init__(self, problem: RegressionProblem):
        self.problem = problem
        self.X = problem.design.entries
        self.y = problem.dataset.y
        self.s2 = problem.dataset.sigma ** 2
        self.k, self.d = self.X.shape
        bp = problem.beta_prior
        if isinstance(bp, NormalPrior):
            self.prior_prec = np.linalg.inv(bp.covariance)
            self.prior_prec = 0.5 * (self.prior_prec + self.prior_prec.T)
            self.prior_mean = bp.mean
            self.prior_logdet = np.linalg.slogdet(bp.covariance)[1]
            self.proper_beta = True
        elif isinstance(bp, ImproperUniform):
            self.prior_prec = np.zeros((self.d, self.d))
            self.prior_mean = np.zeros(self.d)
            self.proper_beta = False
        else:
            raise TypeError(f"unsupported coefficient prior {bp!r}")

    def _precision(self, tau):
        """Return (W, P, chol(P)) for an array of tau values."""
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        W = 1.0 / (self.s2[None, :] + tau[:, None] ** 2)
        P = np.einsum("nk,ki,kj->nij", W, self.X, self.X) + self.prior_prec
        try:
            L = np.linalg.cholesky(P)
        except np.linalg.LinAlgError:
            raise ValidationError(
                "conditional posterior precision is singular; check the regressor matrix"
            ) from None
        return W, P, L

    def moments(self, tau):
        """Conditional posterior means (n, d) and covariances (n, d, d)."""
        W, P, L = self._precision(tau)
        b = W @ (self.X * self.y[:, None]) + self.prior_prec @ self.prior_mean
        eye = np.broadcast_to(np.eye(self.d), P.shape)
        Linv = np.linalg.solve(L, eye)
        cov = np.swapaxes(Linv, 1, 2) @ Linv
        mean = np.einsum("nij,nj->ni", cov, b)
        return mean, cov

    def log_marginal(self, tau) -> np.ndarray:
        """``ln p(y | tau)`` with ``beta`` integrated out.

        Exact for a normal coefficient prior; for a flat prior it is defined
        up to an additive constant that does not depend on ``tau``.
        """
        W, P, L = self._precision(tau)
        logdetP = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
        r = self.y - self.X @ self.prior_mean if self.proper_beta else self.y
        c = W @ (self.X * r[:, None])
        z = np.linalg.solve(L, c[..., None])[..., 0]
        quad = (W * r**2).sum(axis=1) - (z**2).sum(axis=1)
        out = -0.5 * (np.log(1.0 / W).sum(axis=1) + logdetP + quad)
        if self.proper_beta:
            out -= 0.5 * (self.k * _LOG2PI + self.prior_logdet)
        return out

    def log_unnorm_posterior(self, tau) -> np.ndarray:
        t = np.atleast_1d(np.asarray(tau, dtype=float))
        lp = self.problem.tau_prior.logpdf(t)
        out = np.full(t.shape, -np.inf)
        ok = np.isfinite(lp)
        if ok.any():
            out[ok] = lp[ok] + self.log_marginal(t[ok])
        return out


def conditional_beta_posterior(problem: RegressionProblem, tau: float) -> MvnMoments:
    if tau < 0:
        raise ValueError("tau must be non-negative")
    mean, cov = Kernel(problem).moments(tau)
    return MvnMoments(mean[0], cov[0])


def tau_log_marginal_unnorm(problem: RegressionProblem, tau) -> float | np.ndarray:
    """Log prior density plus log marginal likelihood of ``tau``.

    Defined up to a constant when the coefficient prior is flat.
    """
    out = Kernel(problem).log_unnorm_posterior(tau)
    return float(out[0]) if np.ndim(tau) == 0 else out


def conditional_marginal_likelihood(problem: RegressionProblem, tau: float) -> float:
    """Density ``p(y | tau)`` under a proper normal coefficient prior."""
    if not problem.beta_prior.proper:
        raise ValueError("conditional marginal likelihood needs a proper coefficient prior")
    return float(np.exp(Kernel(problem).log_marginal(tau)[0]))


def marginal_likelihood(problem: RegressionProblem) -> float:
    """``p(y)`` with both ``beta`` and ``tau`` integrated out."""
    return float(np.exp(log_marginal_likelihood(problem)))


def log_marginal_likelihood(problem: RegressionProblem) -> float:
    if not problem.proper:
        raise ValueError("marginal likelihood needs proper priors for tau and beta")
    return TauPosterior(Kernel(problem)).log_normalizer


def _gauss_legendre(f, a, b):
    """10-point Gauss-Legendre on each interval [a_i, b_i] (vectorized)."""
    a = np.atleast_1d(a)
    b = np.atleast_1d(b)
    half = 0.5 * (b - a)
    x = (0.5 * (a + b))[:, None] + half[:, None] * _GL_NODES[None, :]
    vals = f(x.ravel()).reshape(x.shape)
    return half * (vals @ _GL_WEIGHTS)


class TauPosterior:
    """Normalized continuous marginal posterior of the heterogeneity.

    The normalizing constant comes from adaptive quadrature; the CDF is
    cached as panel masses of a fixed Gauss-Legendre rule over a partition
    fitted to the density, so quantiles need only cheap root-finding.
    """

    support_lower = 0.0

    def __init__(self, kernel: Kernel):
        self.kernel = kernel
        self._locate()
        self._normalize()
        self._panelize()

    @property
    def problem(self) -> RegressionProblem:
        return self.kernel.problem

    def _logf(self, tau):
        return self.kernel.log_unnorm_posterior(tau)

    def _locate(self):
        sig = self.kernel.problem.dataset.sigma
        scale = float(np.median(sig))
        prior = self.kernel.problem.tau_prior
        if prior.family in ("half_normal", "half_cauchy"):
            scale = min(scale, prior.params[0])
        elif prior.family == "exponential":
            scale = min(scale, 1.0 / prior.params[0])
        top = 1e3 * float(np.median(sig))
        probe = np.concatenate([[0.0], np.geomspace(1e-6 * scale, top, 361)])
        cap = self.kernel.problem.tau_prior.upper_support
        probe = probe[probe <= cap]
        vals = self._logf(probe)
        if not np.any(np.isfinite(vals)):
            raise NonNormalizableError("heterogeneity posterior vanishes everywhere")
        i = int(np.argmax(vals))
        lo = probe[max(i - 1, 0)]
        hi = probe[min(i + 1, probe.size - 1)]
        if hi > lo:
            res = optimize.minimize_scalar(
                lambda t: -self._logf(t)[0], bounds=(lo, hi), method="bounded",
                options={"xatol": 1e-10 * max(hi, 1e-300)},
            )
            cand = [(vals[i], probe[i]), (-res.fun, float(res.x))]
            self.logmax, self.peak = max(cand)
        else:
            self.logmax, self.peak = float(vals[i]), float(probe[i])
        # functions of tau^2 are flat at the origin; snap round-off optima back
        if probe[0] == 0.0 and self.peak < 1e-5 * scale and np.isfinite(vals[0]):
            if vals[0] >= self.logmax - 1e-10:
                self.logmax, self.peak = max(self.logmax, float(vals[0])), 0.0
        # bulk edge: density down by 1e-4; tail edge: down by 1e-12
        self.bulk = self._double_until(np.log(1e-4), scale, cap)
        self.upper = self._double_until(_TAIL_LOG_RATIO, scale, cap)

    def _double_until(self, log_ratio, scale, cap):
        t = max(self.peak, 1e-3 * scale)
        limit = 1e9 * max(scale, self.peak)
        while True:
            if t >= cap:
                return float(cap)
            if self._logf(t)[0] - self.logmax < log_ratio:
                return float(t)
            t *= 2.0
            if t > limit:
                raise NonNormalizableError(
                    "heterogeneity posterior does not decay; "
                    "the prior/data combination gives an improper posterior"
                )

    def _f(self, tau):
        return np.exp(self._logf(tau) - self.logmax)

    def _normalize(self):
        pts = sorted({0.0, self.peak, self.bulk, self.upper})
        pts = [p for p in pts if p <= self.upper]
        # extra geometric cuts keep quad from missing narrow features
        cuts = np.unique(np.concatenate([pts, self.bulk * 2.0 ** np.arange(1, 64)]))
        cuts = cuts[cuts <= self.upper]
        if cuts[-1] < self.upper:
            cuts = np.append(cuts, self.upper)
        total = 0.0
        for a, b in zip(cuts[:-1], cuts[1:]):
            val, _ = integrate.quad(
                lambda t: self._f(t)[0], a, b, epsabs=0.0, epsrel=1e-10, limit=200
            )
            total += val
        if not (np.isfinite(total) and total > 0):
            raise NonNormalizableError("heterogeneity posterior could not be normalized")
        self._quad_total = total
        self.log_normalizer = float(self.logmax + np.log(total))

    def _panelize(self):
        bulk = np.linspace(0.0, self.bulk, 401)
        if self.upper > self.bulk:
            n_tail = int(np.clip(np.ceil(8 * np.log2(self.upper / self.bulk)), 8, 400))
            tail = np.geomspace(self.bulk, self.upper, n_tail + 1)[1:]
            edges = np.concatenate([bulk, tail])
        else:
            edges = bulk
        if self.peak > 0:
            edges = np.unique(np.append(edges, self.peak))
        masses = _gauss_legendre(self._f, edges[:-1], edges[1:])
        self.edges = edges
        self._cum = np.concatenate([[0.0], np.cumsum(masses)])
        self._total = self._cum[-1]

    @cached_property
    def mean(self) -> float:
        m = _gauss_legendre(lambda t: t * self._f(t), self.edges[:-1], self.edges[1:])
        return float(m.sum() / self._total)

    @cached_property
    def sd(self) -> float:
        m2 = _gauss_legendre(lambda t: t * t * self._f(t), self.edges[:-1], self.edges[1:])
        return float(np.sqrt(max(m2.sum() / self._total - self.mean**2, 0.0)))

    @property
    def mode(self) -> float:
        return float(self.peak)

    def logpdf(self, tau) -> np.ndarray:
        return self._logf(tau) - self.log_normalizer

    def pdf(self, tau):
        out = np.exp(self._logf(tau) - self.logmax) / self._total
        return float(out[0]) if np.ndim(tau) == 0 else out

    def cdf(self, tau):
        t = np.atleast_1d(np.asarray(tau, dtype=float))
        tc = np.clip(t, 0.0, self.edges[-1])
        i = np.clip(np.searchsorted(self.edges, tc, side="right") - 1, 0, self.edges.size - 2)
        partial = _gauss_legendre(self._f, self.edges[i], tc)
        out = np.clip((self._cum[i] + partial) / self._total, 0.0, 1.0)
        out = np.where(t >= self.edges[-1], 1.0, out)
        out = np.where(t <= 0, 0.0, out)
        return float(out[0]) if np.ndim(tau) == 0 else out

    def quantile(self, p):
        if np.ndim(p) > 0:
            return np.array([self.quantile(q) for q in np.ravel(p)]).reshape(np.shape(p))
        if not 0.0 <= p <= 1.0:
            raise ValueError("probability must lie in [0, 1]")
        if p == 0.0:
            return 0.0
        if p == 1.0:
            return float(self.edges[-1])
        target = p * self._total
        i = int(np.clip(np.searchsorted(self._cum, target, side="right") - 1, 0, self.edges.size - 2))
        a, b = self.edges[i], self.edges[i + 1]

        def g(t):
            return self._cum[i] + _gauss_legendre(self._f, a, t)[0] - target

        if g(b) <= 0:
            return float(b)
        return float(optimize.brentq(g, a, b, xtol=1e-14, rtol=1e-13, maxiter=200))

    @cached_property
    def _inverse_table(self):
        sub = np.linspace(0.0, 1.0, 9)[1:-1]
        a, b = self.edges[:-1], self.edges[1:]
        inner = (a[:, None] + (b - a)[:, None] * sub[None, :]).ravel()
        taus = np.unique(np.concatenate([self.edges, inner]))
        probs = self.cdf(taus)
        keep = np.concatenate([[True], np.diff(probs) > 0])
        return PchipInterpolator(probs[keep], taus[keep])

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.clip(self._inverse_table(rng.random(n)), 0.0, None)

    def tabulate(self, n: int = 2001, tail: float = 1e-6):
        """Density on ``n`` equidistant points over ``[0, q(1 - tail)]``."""
        tau = np.linspace(0.0, self.quantile(1.0 - tail), n)
        return tau, self.pdf(tau)

    def as_prior(self, n: int = 2001, tail: float = 1e-6):
        from metareg.model import TauPrior

        tau, dens = self.tabulate(n, tail)
        return TauPrior.tabulated(tau, dens, proper=True)
