"""Discrete approximation of the tau-mixture of conditional coefficient posteriors.

Support points are placed so that neighbouring conditional posteriors
differ by at most ``delta`` in symmetrized Kullback-Leibler divergence;
each point carries the posterior mass of the tau bin around it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from metareg.model import RegressionProblem, validate_problem
from metareg.nnhm import Kernel, MvnMoments, TauPosterior


@dataclass(frozen=True, eq=False)
class PosteriorGrid:
    tau: np.ndarray
    weights: np.ndarray
    means: np.ndarray  # (n, d)
    covariances: np.ndarray  # (n, d, d)
    delta: float
    epsilon: float

    def __len__(self):
        return self.tau.size

    def moments(self, j: int) -> MvnMoments:
        return MvnMoments(self.means[j], self.covariances[j])

    @property
    def nodes(self):
        return [(float(t), float(w), self.moments(j)) for j, (t, w) in enumerate(zip(self.tau, self.weights))]


def symmetrized_kl_mvn(a: MvnMoments, b: MvnMoments) -> float:
    """Average of the two directed KL divergences between normals."""
    return float(_sym_kl(a.mean, a.covariance, b.mean, b.covariance))


def _sym_kl(mu_a, cov_a, mu_b, cov_b) -> float:
    d = mu_a.size
    try:
        La = np.linalg.cholesky(cov_a)
        Lb = np.linalg.cholesky(cov_b)
    except np.linalg.LinAlgError:
        raise ValueError("covariance matrices must be positive definite") from None
    inv_a = np.linalg.solve(La.T, np.linalg.solve(La, np.eye(d)))
    inv_b = np.linalg.solve(Lb.T, np.linalg.solve(Lb, np.eye(d)))
    diff = mu_a - mu_b
    val = (
        np.trace(inv_b @ cov_a)
        + np.trace(inv_a @ cov_b)
        - 2 * d
        + diff @ (inv_a + inv_b) @ diff
    )
    return max(0.25 * val, 0.0)


def build_grid(
    problem: RegressionProblem,
    delta: float = 0.01,
    epsilon: float = 1e-4,
    *,
    tau_posterior: TauPosterior | None = None,
) -> PosteriorGrid:
    """Place tau support points and weights for the coefficient mixture."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if tau_posterior is None:
        validate_problem(problem)
        tau_posterior = TauPosterior(Kernel(problem))
    kernel = tau_posterior.kernel
    upper = tau_posterior.quantile(1.0 - epsilon)

    cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}

    def mom(t):
        if t not in cache:
            m, c = kernel.moments(t)
            cache[t] = (m[0], c[0])
        return cache[t]

    def div(s, t):
        return _sym_kl(*mom(s), *mom(t))

    median = tau_posterior.quantile(0.5)
    if div(median, 0.0) <= delta and div(median, upper) <= delta:
        nodes = [median]
    else:
        nodes = [0.0]
        tol = 1e-3 * delta
        while nodes[-1] < upper:
            cur = nodes[-1]
            if div(cur, upper) <= delta:
                nodes.append(upper)
                break
            lo, hi = cur, upper
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                dv = div(cur, mid)
                if dv <= delta:
                    lo = mid
                    if delta - dv <= tol:
                        break
                else:
                    hi = mid
                if hi - lo <= 1e-14 * max(hi, 1.0):
                    break
            if lo <= cur:
                lo = hi if hi > cur else upper
            nodes.append(lo)
    tau = np.array(nodes)
    if tau.size == 1:
        weights = np.ones(1)
    else:
        bounds = np.concatenate([[0.0], 0.5 * (tau[:-1] + tau[1:]), [upper]])
        cdf = tau_posterior.cdf(bounds)
        weights = np.diff(cdf)
        weights = np.clip(weights, 0.0, None)
        weights = weights / weights.sum()
    means = np.array([mom(t)[0] for t in tau])
    covs = np.array([mom(t)[1] for t in tau])
    return PosteriorGrid(tau, weights, means, covs, float(delta), float(epsilon))
