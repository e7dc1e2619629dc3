"""Problem assembly: study data, regressor matrix, priors, validation.

All value objects are immutable after construction; array fields are
copied and marked read-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from metareg.effect_sizes import EffectEstimate


class ValidationError(ValueError):
    """Raised when a regression problem is not well posed."""


class DimensionError(ValidationError):
    pass


class RankError(ValidationError):
    pass


class NonFiniteError(ValidationError):
    pass


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StudyDataset:
    labels: tuple[str, ...]
    y: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        y = _frozen(self.y)
        sigma = _frozen(self.sigma)
        labels = tuple(str(lab) for lab in self.labels)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "labels", labels)
        if y.ndim != 1 or y.size < 1:
            raise DimensionError("need a non-empty vector of estimates")
        if sigma.shape != y.shape or len(labels) != y.size:
            raise DimensionError(
                f"lengths differ: y={y.size}, sigma={sigma.size}, labels={len(labels)}"
            )
        if not np.all(np.isfinite(y)):
            raise NonFiniteError("estimates contain non-finite values")
        if not (np.all(np.isfinite(sigma)) and np.all(sigma > 0)):
            raise NonFiniteError("standard errors must be positive and finite")
        if len(set(labels)) != len(labels):
            raise ValidationError("study labels must be unique")

    @classmethod
    def from_estimates(cls, estimates: Sequence[EffectEstimate]) -> StudyDataset:
        return cls(
            labels=[e.label for e in estimates],
            y=[e.y for e in estimates],
            sigma=[e.sigma for e in estimates],
        )

    @property
    def k(self) -> int:
        return self.y.size

    def subset(self, mask) -> StudyDataset:
        idx = np.flatnonzero(np.asarray(mask)) if np.asarray(mask).dtype == bool else np.asarray(mask)
        return StudyDataset(
            [self.labels[i] for i in idx], self.y[idx], self.sigma[idx]
        )


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    entries: np.ndarray
    column_names: tuple[str, ...]

    def __post_init__(self):
        X = _frozen(self.entries)
        if X.ndim == 1:
            X = _frozen(X[:, None])
        names = tuple(str(n) for n in self.column_names)
        object.__setattr__(self, "entries", X)
        object.__setattr__(self, "column_names", names)
        if X.ndim != 2 or X.shape[1] < 1:
            raise DimensionError("regressor matrix needs at least one column")
        if len(names) != X.shape[1]:
            raise DimensionError(
                f"{X.shape[1]} columns but {len(names)} column names"
            )
        if len(set(names)) != len(names):
            raise DimensionError("column names must be unique")
        if not np.all(np.isfinite(X)):
            raise NonFiniteError("regressor matrix contains non-finite entries")

    @classmethod
    def intercept(cls, k: int) -> DesignMatrix:
        return cls(np.ones((k, 1)), ("intercept",))

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    @property
    def d(self) -> int:
        return self.entries.shape[1]

    def column_index(self, key: int | str) -> int:
        if isinstance(key, str):
            try:
                return self.column_names.index(key)
            except ValueError:
                raise KeyError(f"no column named {key!r}") from None
        if not -self.d <= key < self.d:
            raise IndexError(f"column index {key} out of range for d={self.d}")
        return key % self.d

    def rows(self, mask) -> DesignMatrix:
        return DesignMatrix(self.entries[np.asarray(mask)], self.column_names)

    def columns(self, keys) -> DesignMatrix:
        idx = [self.column_index(k) for k in keys]
        return DesignMatrix(self.entries[:, idx], [self.column_names[i] for i in idx])


class ImproperUniform:
    """Flat (improper) prior on the regression coefficients."""

    proper = False

    def __repr__(self):
        return "ImproperUniform()"

    def __eq__(self, other):
        return isinstance(other, ImproperUniform)

    def __hash__(self):
        return hash(ImproperUniform)


@dataclass(frozen=True, eq=False)
class NormalPrior:
    mean: np.ndarray
    covariance: np.ndarray

    proper = True

    def __post_init__(self):
        mean = _frozen(np.atleast_1d(self.mean))
        cov = np.array(np.atleast_2d(self.covariance), dtype=float)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise DimensionError(
                f"prior mean of length {mean.size} needs a {mean.size}x{mean.size} covariance"
            )
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise NonFiniteError("prior moments contain non-finite values")
        if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
            raise ValidationError("prior covariance must be symmetric")
        cov = 0.5 * (cov + cov.T)
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValidationError("prior covariance must be positive definite") from None
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", _frozen(cov))

    @classmethod
    def from_sd(cls, mean, sd) -> NormalPrior:
        sd = np.atleast_1d(np.asarray(sd, dtype=float))
        if not np.all(sd > 0):
            raise ValidationError("prior standard deviations must be positive")
        mean = np.broadcast_to(np.asarray(mean, dtype=float), sd.shape)
        return cls(mean, np.diag(sd**2))

    @property
    def d(self) -> int:
        return self.mean.size

    def __eq__(self, other):
        return (
            isinstance(other, NormalPrior)
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.covariance, other.covariance)
        )

    __hash__ = None


BetaPrior = ImproperUniform | NormalPrior

_HALF_NORMAL_LOGC = 0.5 * np.log(2.0 / np.pi)


@dataclass(frozen=True, eq=False)
class TauPrior:
    """Prior on the heterogeneity standard deviation ``tau >= 0``.

    Use the named constructors (:meth:`half_normal`, :meth:`half_cauchy`,
    :meth:`exponential`, :meth:`uniform`, :meth:`tabulated`).
    """

    family: str
    params: tuple[float, ...] = ()
    proper: bool = True
    table: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)
    _interp: Callable | None = field(default=None, repr=False, compare=False)

    FAMILIES = ("half_normal", "half_cauchy", "exponential", "uniform", "tabulated")

    def __post_init__(self):
        if self.family not in self.FAMILIES:
            raise ValueError(f"unknown tau prior family {self.family!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.family in ("half_normal", "half_cauchy", "exponential"):
            if len(self.params) != 1 or not (np.isfinite(self.params[0]) and self.params[0] > 0):
                raise ValueError(f"{self.family} prior needs one positive parameter")
        if self.family == "tabulated":
            tau, dens = self.table
            tau = np.asarray(tau, dtype=float)
            dens = np.asarray(dens, dtype=float)
            if tau.ndim != 1 or tau.shape != dens.shape or tau.size < 2:
                raise ValueError("tabulated prior needs matching 1-d grids")
            if tau[0] < 0 or np.any(np.diff(tau) <= 0):
                raise ValueError("tabulated prior grid must be increasing and non-negative")
            if np.any(dens < 0) or not np.all(np.isfinite(dens)):
                raise ValueError("tabulated density must be finite and non-negative")
            interp = PchipInterpolator(tau, dens, extrapolate=False)
            if self.proper:
                total = float(interp.integrate(tau[0], tau[-1]))
                if not total > 0:
                    raise ValueError("tabulated density has zero mass")
                dens = dens / total
                interp = PchipInterpolator(tau, dens, extrapolate=False)
            object.__setattr__(self, "table", (_frozen(tau), _frozen(dens)))
            object.__setattr__(self, "_interp", interp)

    @classmethod
    def half_normal(cls, scale: float) -> TauPrior:
        return cls("half_normal", (scale,))

    @classmethod
    def half_cauchy(cls, scale: float) -> TauPrior:
        return cls("half_cauchy", (scale,))

    @classmethod
    def exponential(cls, rate: float) -> TauPrior:
        return cls("exponential", (rate,))

    @classmethod
    def uniform(cls) -> TauPrior:
        return cls("uniform", (), proper=False)

    @classmethod
    def tabulated(cls, tau, density, proper: bool = True) -> TauPrior:
        """Prior interpolated monotonically from ``(tau, density)`` pairs.

        The density is zero beyond the last grid point; proper tables are
        rescaled to unit mass.
        """
        return cls("tabulated", (), proper=proper, table=(tau, density))

    @classmethod
    def from_density(
        cls, density: Callable, upper: float, n: int = 2001, proper: bool = True
    ) -> TauPrior:
        tau = np.linspace(0.0, upper, n)
        return cls.tabulated(tau, np.array([density(t) for t in tau], dtype=float), proper)

    @property
    def upper_support(self) -> float:
        return float(self.table[0][-1]) if self.family == "tabulated" else np.inf

    def logpdf(self, tau) -> np.ndarray:
        """Log density; ``-inf`` outside the support."""
        t = np.asarray(tau, dtype=float)
        with np.errstate(divide="ignore"):
            if self.family == "half_normal":
                s = self.params[0]
                out = _HALF_NORMAL_LOGC - np.log(s) - 0.5 * (t / s) ** 2
            elif self.family == "half_cauchy":
                s = self.params[0]
                out = np.log(2.0 / (np.pi * s)) - np.log1p((t / s) ** 2)
            elif self.family == "exponential":
                rate = self.params[0]
                out = np.log(rate) - rate * t
            elif self.family == "uniform":
                out = np.zeros_like(t)
            else:
                dens = np.nan_to_num(self._interp(t), nan=0.0)
                out = np.log(np.maximum(dens, 0.0))
        return np.where(t < 0, -np.inf, out)

    def pdf(self, tau) -> np.ndarray:
        return np.exp(self.logpdf(tau))

    def to_spec(self) -> str:
        if self.family == "uniform":
            return "uniform"
        if self.family == "tabulated":
            return "tabulated"
        name = {"half_normal": "halfnormal", "half_cauchy": "halfcauchy"}.get(
            self.family, self.family
        )
        return f"{name}:{self.params[0]!r}"

    def to_dict(self) -> dict:
        out = {"family": self.family, "params": list(self.params), "proper": self.proper}
        if self.family == "tabulated":
            out["tau"] = self.table[0].tolist()
            out["density"] = self.table[1].tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> TauPrior:
        if data["family"] == "tabulated":
            return cls.tabulated(data["tau"], data["density"], proper=data["proper"])
        return cls(data["family"], tuple(data["params"]), proper=data["proper"])


@dataclass(frozen=True, eq=False)
class RegressionProblem:
    dataset: StudyDataset
    design: DesignMatrix | None = None
    tau_prior: TauPrior = field(default_factory=TauPrior.uniform)
    beta_prior: ImproperUniform | NormalPrior = field(default_factory=ImproperUniform)

    def __post_init__(self):
        if self.design is None:
            object.__setattr__(self, "design", DesignMatrix.intercept(self.dataset.k))

    @property
    def k(self) -> int:
        return self.dataset.k

    @property
    def d(self) -> int:
        return self.design.d

    @property
    def proper(self) -> bool:
        return self.tau_prior.proper and self.beta_prior.proper

    def replace(self, **changes) -> RegressionProblem:
        kw = dict(
            dataset=self.dataset,
            design=self.design,
            tau_prior=self.tau_prior,
            beta_prior=self.beta_prior,
        )
        kw.update(changes)
        return RegressionProblem(**kw)


def build_indicator_design(
    group_labels: Sequence[str],
    coding: str = "group_means",
    levels: Sequence[str] | None = None,
) -> DesignMatrix:
    """Indicator regressors for a grouping of the studies.

    ``group_means`` gives one 0/1 column per group.  ``intercept_offset``
    gives an all-ones column followed by one indicator per non-reference
    group; the reference is the first group.  Groups are taken in order of
    appearance unless ``levels`` fixes the order.
    """
    labels = [str(g) for g in group_labels]
    if not labels:
        raise ValueError("no group labels given")
    groups = list(dict.fromkeys(labels))
    if levels is not None:
        levels = [str(g) for g in levels]
        if sorted(levels) != sorted(groups):
            raise ValueError(f"levels {levels} do not match the groups {groups}")
        groups = levels
    if len(groups) == 1:
        return DesignMatrix(np.ones((len(labels), 1)), ("intercept",))
    ind = np.array([[lab == g for g in groups] for lab in labels], dtype=float)
    if coding == "group_means":
        return DesignMatrix(ind, groups)
    if coding == "intercept_offset":
        X = np.column_stack([np.ones(len(labels)), ind[:, 1:]])
        return DesignMatrix(X, ["intercept", *groups[1:]])
    raise ValueError(f"unknown coding {coding!r}")


def center_covariable(values, center: float) -> np.ndarray:
    return np.asarray(values, dtype=float) - center


def transform_normal_prior(A, prior: NormalPrior) -> NormalPrior:
    """Prior implied on ``A @ beta`` by a normal prior on ``beta``."""
    if not isinstance(prior, NormalPrior):
        raise TypeError("only normal priors can be transformed")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = prior.d
    if A.shape != (d, d):
        raise DimensionError(f"transformation must be {d}x{d}, got {A.shape}")
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] <= d * np.finfo(float).eps * sv[0]:
        raise ValidationError("transformation matrix is singular")
    cov = A @ prior.covariance @ A.T
    return NormalPrior(A @ prior.mean, 0.5 * (cov + cov.T))


def numerical_rank(X: np.ndarray) -> int:
    sv = np.linalg.svd(X, compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0
    tol = max(X.shape) * np.finfo(float).eps * sv[0]
    return int(np.sum(sv > tol))


def validate_problem(problem: RegressionProblem) -> RegressionProblem:
    """Check dimensions, finiteness and identifiability; return the problem.

    With a flat coefficient prior the regressor matrix must have full column
    rank, and under an improper heterogeneity prior there must be more
    studies than coefficients.
    """
    ds, X = problem.dataset, problem.design
    k, d = ds.k, X.d
    if X.shape[0] != k:
        raise DimensionError(f"regressor matrix has {X.shape[0]} rows for {k} studies")
    bp = problem.beta_prior
    if isinstance(bp, NormalPrior):
        if bp.d != d:
            raise DimensionError(f"coefficient prior has dimension {bp.d}, expected {d}")
    elif isinstance(bp, ImproperUniform):
        rank = numerical_rank(X.entries)
        if rank < d:
            raise RankError(
                f"regressor matrix has rank {rank} < {d} columns; "
                "a flat coefficient prior needs full column rank"
            )
        min_k = d + 1 if not problem.tau_prior.proper else d
        if k < min_k:
            raise RankError(
                f"{k} studies cannot identify {d} coefficients under the given priors"
            )
    else:
        raise TypeError(f"unsupported coefficient prior {bp!r}")
    if not isinstance(problem.tau_prior, TauPrior):
        raise TypeError("tau_prior must be a TauPrior")
    return problem
