"""Fitted posterior: summaries, mixtures, shrinkage, prediction, sampling."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize, special

from metareg.grid import PosteriorGrid, build_grid
from metareg.model import RegressionProblem, validate_problem
from metareg.nnhm import Kernel, TauPosterior

_SQRT2 = np.sqrt(2.0)
_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0

STAT_ROWS = ("mode", "median", "mean", "sd", "95% lower", "95% upper")


def golden_section(f, a: float, b: float, tol: float = 1e-6, maxiter: int = 200) -> float:
    """Minimizer of a unimodal ``f`` on ``[a, b]``; endpoints are checked too."""
    lo, hi = a, b
    c = hi - _INVPHI * (hi - lo)
    d = lo + _INVPHI * (hi - lo)
    fc, fd = f(c), f(d)
    for _ in range(maxiter):
        if hi - lo <= tol:
            break
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - _INVPHI * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _INVPHI * (hi - lo)
            fd = f(d)
    best_x, best_f = (c, fc) if fc <= fd else (d, fd)
    for x in (a, b):
        fx = f(x)
        if np.isfinite(fx) and fx < best_f:
            best_x, best_f = x, fx
    return best_x


@dataclass(frozen=True, eq=False)
class ScalarMixture:
    """Finite mixture of univariate normals (zero-sd components allowed)."""

    weights: np.ndarray
    means: np.ndarray
    sds: np.ndarray
    kind: str = "coefficient"

    support_lower = -np.inf

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        m = np.asarray(self.means, dtype=float)
        s = np.asarray(self.sds, dtype=float)
        if not (w.shape == m.shape == s.shape and w.ndim == 1 and w.size > 0):
            raise ValueError("mixture components must be matching 1-d arrays")
        if np.any(w < 0) or np.any(s < 0):
            raise ValueError("weights and standard deviations must be non-negative")
        object.__setattr__(self, "weights", w / w.sum())
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "sds", s)

    def __len__(self):
        return self.weights.size

    def mean(self) -> float:
        return float(self.weights @ self.means)

    def var(self) -> float:
        m = self.mean()
        return float(max(self.weights @ (self.sds**2 + self.means**2) - m * m, 0.0))

    def sd(self) -> float:
        return float(np.sqrt(self.var()))

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        pos = self.sds > 0
        s = self.sds[pos]
        z = (x[..., None] - self.means[pos]) / s
        out = (np.exp(-0.5 * z * z) / (s * np.sqrt(2 * np.pi))) @ self.weights[pos]
        return float(out) if out.ndim == 0 else out

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        pos = self.sds > 0
        out = np.zeros(x.shape)
        if pos.any():
            z = (x[..., None] - self.means[pos]) / self.sds[pos]
            out = out + special.ndtr(z) @ self.weights[pos]
        if (~pos).any():
            out = out + (x[..., None] >= self.means[~pos]) @ self.weights[~pos]
        out = np.clip(out, 0.0, 1.0)
        return float(out) if out.ndim == 0 else out

    def _bracket(self):
        spread = np.where(self.sds > 0, 40.0 * self.sds, 0.0)
        lo = float(np.min(self.means - spread))
        hi = float(np.max(self.means + spread))
        if hi <= lo:
            lo, hi = lo - 1.0, hi + 1.0
        return lo, hi

    def quantile(self, p):
        if np.ndim(p) > 0:
            return np.array([self.quantile(q) for q in np.ravel(p)]).reshape(np.shape(p))
        if not 0.0 <= p <= 1.0:
            raise ValueError("probability must lie in [0, 1]")
        if p == 0.0:
            return -np.inf if np.any(self.sds > 0) else float(self.means.min())
        if p == 1.0:
            return np.inf if np.any(self.sds > 0) else float(self.means.max())
        lo, hi = self._bracket()
        while self.cdf(lo) > p:
            lo -= hi - lo
        while self.cdf(hi) < p:
            hi += hi - lo
        if np.all(self.sds > 0):
            return float(optimize.brentq(lambda x: self.cdf(x) - p, lo, hi, xtol=1e-12, rtol=1e-14))
        # step components: bisect for the smallest x with cdf(x) >= p
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.cdf(mid) >= p:
                hi = mid
            else:
                lo = mid
            if hi - lo <= 1e-13 * max(1.0, abs(hi)):
                break
        return float(hi)

    def mode(self) -> float:
        if np.any(self.sds == 0):
            atoms = self.sds == 0
            return float(self.means[atoms][np.argmax(self.weights[atoms])])
        starts = np.append(self.means, self.mean())
        best = None
        for x0 in np.unique(starts):
            res = optimize.minimize(
                lambda v: -np.log(self.pdf(v[0]) + 1e-300), [x0], method="Nelder-Mead",
                options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 2000},
            )
            x = float(res.x[0])
            if best is None or self.pdf(x) > self.pdf(best):
                best = x
        return best

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        comp = rng.choice(self.weights.size, size=n, p=self.weights)
        return self.means[comp] + self.sds[comp] * rng.standard_normal(n)

    def interval(self, level: float = 0.95, method: str = "shortest") -> tuple[float, float]:
        return credible_interval(self, level, method)


def credible_interval(dist, level: float = 0.95, method: str = "shortest") -> tuple[float, float]:
    """Central or shortest interval of a distribution with a ``quantile`` method."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if method == "central":
        return float(dist.quantile((1 - level) / 2)), float(dist.quantile((1 + level) / 2))
    if method != "shortest":
        raise ValueError(f"unknown interval method {method!r}")

    def width(p):
        return dist.quantile(min(p + level, 1.0)) - dist.quantile(p)

    p = golden_section(width, 0.0, 1.0 - level, tol=1e-9)
    return float(dist.quantile(p)), float(dist.quantile(min(p + level, 1.0)))


@dataclass(frozen=True, eq=False)
class SummaryTable:
    """Six summary statistics (rows) for each parameter (columns)."""

    columns: tuple[str, ...]
    values: np.ndarray  # (6, n_columns)

    rows = STAT_ROWS

    def column(self, name: str) -> dict[str, float]:
        j = self.columns.index(name)
        return {r: float(self.values[i, j]) for i, r in enumerate(self.rows)}

    def __getitem__(self, key):
        row, col = key
        return float(self.values[self.rows.index(row), self.columns.index(col)])

    def extend(self, other: SummaryTable) -> SummaryTable:
        return SummaryTable(self.columns + other.columns, np.hstack([self.values, other.values]))

    def to_dict(self) -> dict:
        return {c: self.column(c) for c in self.columns}

    @classmethod
    def from_dict(cls, data: Mapping[str, Mapping[str, float]]) -> SummaryTable:
        cols = tuple(data)
        vals = np.array([[data[c][r] for c in cols] for r in STAT_ROWS], dtype=float)
        return cls(cols, vals)

    def to_text(self, digits: int = 7) -> str:
        width = max(12, digits + 6, *(len(c) + 1 for c in self.columns))
        head = " " * 10 + "".join(f"{c:>{width}}" for c in self.columns)
        lines = [head]
        for i, r in enumerate(self.rows):
            cells = "".join(f"{v:>{width}.{digits}f}" for v in self.values[i])
            lines.append(f"{r:<10}{cells}")
        return "\n".join(lines)


def _stats(dist) -> list[float]:
    lo, hi = credible_interval(dist, 0.95, "shortest")
    return [dist.mode(), float(dist.quantile(0.5)), dist.mean(), dist.sd(), lo, hi]


class _TauView:
    """Adapter exposing the continuous tau posterior with mixture-like methods."""

    support_lower = 0.0

    def __init__(self, post: TauPosterior):
        self.post = post

    def mode(self):
        return self.post.mode

    def mean(self):
        return self.post.mean

    def sd(self):
        return self.post.sd

    def quantile(self, p):
        return self.post.quantile(p)


@dataclass(frozen=True, eq=False)
class FitResult:
    problem: RegressionProblem
    grid: PosteriorGrid
    tau_posterior: TauPosterior
    log_marginal_likelihood: float | None
    summary: SummaryTable
    delta: float = 0.01
    epsilon: float = 1e-4
    kernel: Kernel = field(repr=False, default=None)

    @property
    def marginal_likelihood(self) -> float | None:
        lml = self.log_marginal_likelihood
        return None if lml is None else float(np.exp(lml))

    @property
    def column_names(self) -> tuple[str, ...]:
        return self.problem.design.column_names

    def tau_quantile(self, p):
        return tau_quantile(self, p)

    def tau_cdf(self, tau):
        return self.tau_posterior.cdf(tau)

    def tau_density(self, tau):
        return self.tau_posterior.pdf(tau)


def fit(problem: RegressionProblem, delta: float = 0.01, epsilon: float = 1e-4) -> FitResult:
    """Fit the meta-regression; see :func:`build_grid` for ``delta``/``epsilon``."""
    validate_problem(problem)
    kernel = Kernel(problem)
    post = TauPosterior(kernel)
    grid = build_grid(problem, delta, epsilon, tau_posterior=post)
    lml = post.log_normalizer if problem.proper else None
    partial = FitResult(problem, grid, post, lml, None, delta, epsilon, kernel)
    cols = ["tau", *problem.design.column_names]
    vals = [_stats(_TauView(post))]
    for j in range(problem.d):
        vals.append(_stats(coefficient_marginal(partial, j)))
    summary = SummaryTable(tuple(cols), np.array(vals).T)
    return FitResult(problem, grid, post, lml, summary, delta, epsilon, kernel)


def _column(fit: FitResult, index: int | str) -> int:
    return fit.problem.design.column_index(index)


def coefficient_marginal(fit: FitResult, index: int | str) -> ScalarMixture:
    """Marginal posterior of one coefficient (0-based index or column name)."""
    j = _column(fit, index)
    g = fit.grid
    return ScalarMixture(g.weights, g.means[:, j], np.sqrt(g.covariances[:, j, j]), "coefficient")


def tau_quantile(fit: FitResult, p):
    if np.any((np.asarray(p) <= 0) | (np.asarray(p) >= 1)):
        raise ValueError("probability must lie in (0, 1)")
    return fit.tau_posterior.quantile(p)


def tau_density(fit: FitResult, tau):
    return fit.tau_posterior.pdf(tau)


def tau_cdf(fit: FitResult, tau):
    return fit.tau_posterior.cdf(tau)


def tau_interval(fit: FitResult, level: float = 0.95, method: str = "shortest"):
    return credible_interval(fit.tau_posterior, level, method)


def linear_combination(fit: FitResult, x: Sequence[float], mean: bool = True) -> ScalarMixture:
    """Posterior of ``x' beta`` (``mean=True``) or of a new study's mean."""
    x = np.asarray(x, dtype=float)
    if x.shape != (fit.problem.d,):
        raise ValueError(f"combination needs {fit.problem.d} coefficients, got {x.shape}")
    g = fit.grid
    m = g.means @ x
    v = np.einsum("i,nij,j->n", x, g.covariances, x)
    if not mean:
        v = v + g.tau**2
    return ScalarMixture(g.weights, m, np.sqrt(np.maximum(v, 0.0)),
                         "combination_mean" if mean else "prediction")


def shrinkage(fit: FitResult, i: int) -> ScalarMixture:
    """Posterior of the study-specific mean of study ``i`` (0-based)."""
    k = fit.problem.k
    if not -k <= i < k:
        raise IndexError(f"study index {i} out of range for k={k}")
    i %= k
    g = fit.grid
    y = fit.problem.dataset.y[i]
    s2 = fit.problem.dataset.sigma[i] ** 2
    xi = fit.problem.design.entries[i]
    t2 = g.tau**2
    fitted = g.means @ xi
    fvar = np.einsum("i,nij,j->n", xi, g.covariances, xi)
    shrink = s2 / (s2 + t2)
    m = (t2 * y + s2 * fitted) / (s2 + t2)
    v = s2 * t2 / (s2 + t2) + shrink**2 * fvar
    return ScalarMixture(g.weights, m, np.sqrt(np.maximum(v, 0.0)), "shrinkage")


def sample_posterior(fit: FitResult, n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``(tau, beta)`` pairs; ``beta`` comes from the exact conditional."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    tau = fit.tau_posterior.sample(rng, n)
    mean, cov = fit.kernel.moments(tau)
    L = np.linalg.cholesky(cov)
    z = rng.standard_normal((n, fit.problem.d))
    beta = mean + np.einsum("nij,nj->ni", L, z)
    return tau, beta


def map_estimates(fit: FitResult) -> dict[str, np.ndarray]:
    """Joint and marginal posterior modes, ordered ``(tau, beta_1..beta_d)``."""
    post = fit.tau_posterior
    kernel = fit.kernel

    def neg_joint(t):
        t = max(float(t), 0.0)
        _, cov = kernel.moments(t)
        logdet = np.linalg.slogdet(cov[0])[1]
        return -(post.logpdf(t)[0] - 0.5 * logdet)

    hi = post.quantile(1.0 - fit.epsilon)
    scan = np.linspace(0.0, hi, 201)
    vals = np.array([neg_joint(t) for t in scan])
    i = int(np.argmin(vals))
    a, b = scan[max(i - 1, 0)], scan[min(i + 1, scan.size - 1)]
    t_joint = golden_section(neg_joint, a, b, tol=1e-10 * max(hi, 1e-12))
    if t_joint < 1e-6 * hi and neg_joint(0.0) <= neg_joint(t_joint) + 1e-10:
        t_joint = 0.0
    beta_joint = kernel.moments(t_joint)[0][0]
    marginal = [post.mode] + [coefficient_marginal(fit, j).mode() for j in range(fit.problem.d)]
    return {
        "joint": np.concatenate([[t_joint], beta_joint]),
        "marginal": np.array(marginal),
    }


def summarize(
    fit: FitResult,
    extra_rows: Mapping[str, Sequence[float] | tuple[Sequence[float], bool]] | None = None,
) -> SummaryTable:
    """Base summary plus one column per requested linear combination.

    Each extra row is a coefficient vector, or a ``(vector, mean_flag)``
    pair where ``mean_flag=False`` requests a prediction.
    """
    table = fit.summary
    if not extra_rows:
        return table
    cols, vals = [], []
    for name, spec in extra_rows.items():
        x, mean = _combo_spec(spec)
        cols.append(name)
        vals.append(_stats(linear_combination(fit, x, mean)))
    return table.extend(SummaryTable(tuple(cols), np.array(vals).T))


def _combo_spec(spec) -> tuple[np.ndarray, bool]:
    if isinstance(spec, tuple) and len(spec) == 2 and isinstance(spec[1], (bool, np.bool_)):
        return np.asarray(spec[0], dtype=float), bool(spec[1])
    return np.asarray(spec, dtype=float), True


def combination_table(
    fit: FitResult, rows: Mapping[str, Sequence[float]], mean: bool = True
) -> SummaryTable:
    """Summary statistics for the given combinations only."""
    cols, vals = [], []
    for name, x in rows.items():
        cols.append(name)
        vals.append(_stats(linear_combination(fit, x, mean)))
    return SummaryTable(tuple(cols), np.array(vals).T)
