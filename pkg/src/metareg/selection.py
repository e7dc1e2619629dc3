"""Exhaustive Bayesian model selection over covariable subsets."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from metareg.inference import FitResult, ScalarMixture, fit, linear_combination
from metareg.model import (
    DesignMatrix,
    NormalPrior,
    RegressionProblem,
    StudyDataset,
    TauPrior,
)

MAX_VARIABLES = 20


@dataclass(frozen=True, eq=False)
class ModelSpace:
    """All subsets of ``variables``; the intercept is always included.

    Model ``m`` includes variable ``j`` iff bit ``j`` of ``m`` is set, so the
    first variable toggles fastest.
    """

    variables: tuple[str, ...]
    models: np.ndarray  # (n_models, N) bool
    prior_probs: np.ndarray
    log_mls: np.ndarray | None = None
    posterior_probs: np.ndarray | None = None
    fits: tuple[FitResult, ...] | None = field(default=None, repr=False)

    def __len__(self):
        return self.models.shape[0]

    def included(self, m: int) -> tuple[str, ...]:
        return tuple(v for v, inc in zip(self.variables, self.models[m]) if inc)

    def design(self, m: int, covariables: Mapping[str, Sequence[float]], k: int) -> DesignMatrix:
        cols = [np.ones(k)] + [np.asarray(covariables[v], dtype=float) for v in self.included(m)]
        return DesignMatrix(np.column_stack(cols), ["intercept", *self.included(m)])

    def ranking(self) -> list[int]:
        """Model indices by decreasing posterior probability.

        Ties go to fewer included variables, then to the lexicographically
        smaller list of included names.
        """
        probs = self.posterior_probs if self.posterior_probs is not None else self.prior_probs
        return sorted(
            range(len(self)),
            key=lambda m: (-probs[m], int(self.models[m].sum()), self.included(m)),
        )

    def to_table(self) -> list[dict]:
        rows = []
        for rank, m in enumerate(self.ranking(), start=1):
            rows.append({
                "rank": rank,
                "model": m,
                "included": list(self.included(m)),
                "prior_prob": float(self.prior_probs[m]),
                "log_marginal_likelihood": None if self.log_mls is None else float(self.log_mls[m]),
                "posterior_prob": None if self.posterior_probs is None else float(self.posterior_probs[m]),
            })
        return rows


def enumerate_models(variables: Sequence[str]) -> ModelSpace:
    variables = tuple(str(v) for v in variables)
    n = len(variables)
    if not 1 <= n <= MAX_VARIABLES:
        raise ValueError(f"need between 1 and {MAX_VARIABLES} variables, got {n}")
    if len(set(variables)) != n:
        raise ValueError("variable names must be unique")
    codes = np.arange(2**n)
    models = ((codes[:, None] >> np.arange(n)[None, :]) & 1).astype(bool)
    return ModelSpace(variables, models, np.full(2**n, 2.0**-n))


def model_prior(space: ModelSpace, kind: str = "uniform", pi: float = 0.5) -> np.ndarray:
    """Prior model probabilities; ``bernoulli`` includes each variable w.p. ``pi``."""
    n_var = len(space.variables)
    if kind == "uniform":
        return np.full(len(space), 2.0**-n_var)
    if kind == "bernoulli":
        if not 0.0 < pi < 1.0:
            raise ValueError("inclusion probability must lie in (0, 1)")
        n = space.models.sum(axis=1)
        return pi**n * (1.0 - pi) ** (n_var - n)
    raise ValueError(f"unknown model prior {kind!r}")


def score_models(
    space: ModelSpace,
    dataset: StudyDataset,
    covariables: Mapping[str, Sequence[float]],
    *,
    tau_prior: TauPrior | None = None,
    intercept_sd: float = 10.0,
    effect_sd: float = 2.82,
    intercept_mean: float = 0.0,
    delta: float = 0.01,
    epsilon: float = 1e-4,
) -> ModelSpace:
    """Fit every model and attach log marginal likelihoods and fits.

    Coefficient priors are independent zero-mean normals; the intercept and
    covariable effects have their own standard deviations.
    """
    tau_prior = TauPrior.half_normal(0.5) if tau_prior is None else tau_prior
    if not tau_prior.proper:
        raise ValueError("model selection needs a proper heterogeneity prior")
    if not (intercept_sd > 0 and effect_sd > 0):
        raise ValueError("coefficient prior standard deviations must be positive")
    missing = [v for v in space.variables if v not in covariables]
    if missing:
        raise KeyError(f"no covariable data for {missing}")
    fits, lmls = [], []
    for m in range(len(space)):
        X = space.design(m, covariables, dataset.k)
        sd = [intercept_sd] + [effect_sd] * (X.d - 1)
        mean = [intercept_mean] + [0.0] * (X.d - 1)
        problem = RegressionProblem(dataset, X, tau_prior, NormalPrior.from_sd(mean, sd))
        f = fit(problem, delta, epsilon)
        fits.append(f)
        lmls.append(f.log_marginal_likelihood)
    return replace(space, log_mls=np.array(lmls), fits=tuple(fits), posterior_probs=None)


def posterior_model_probs(space: ModelSpace) -> np.ndarray:
    if space.log_mls is None:
        raise ValueError("models have not been scored")
    with np.errstate(divide="ignore"):
        logp = np.log(space.prior_probs) + space.log_mls
    return np.exp(logp - logsumexp(logp))


def with_posterior(space: ModelSpace) -> ModelSpace:
    return replace(space, posterior_probs=posterior_model_probs(space))


def inclusion_probabilities(space: ModelSpace) -> np.ndarray:
    if space.posterior_probs is None:
        raise ValueError("posterior model probabilities missing")
    return space.posterior_probs @ space.models.astype(float)


def median_probability_model(space: ModelSpace) -> tuple[str, ...]:
    incl = inclusion_probabilities(space)
    return tuple(v for v, p in zip(space.variables, incl) if p >= 0.5)


def model_averaged_combination(
    space: ModelSpace,
    fits: Sequence[FitResult],
    x_by_model: Sequence[Sequence[float]],
    mean: bool = True,
) -> ScalarMixture:
    """Pool each model's combination mixture, weighted by model probability."""
    if space.posterior_probs is None:
        raise ValueError("posterior model probabilities missing")
    if len(fits) != len(space) or len(x_by_model) != len(space):
        raise ValueError("need one fit and one coefficient vector per model")
    w, m, s = [], [], []
    for prob, f, x in zip(space.posterior_probs, fits, x_by_model):
        mix = linear_combination(f, x, mean)
        w.append(prob * mix.weights)
        m.append(mix.means)
        s.append(mix.sds)
    w = np.concatenate(w)
    keep = w > 0
    return ScalarMixture(w[keep], np.concatenate(m)[keep], np.concatenate(s)[keep],
                         "combination_mean" if mean else "prediction")
