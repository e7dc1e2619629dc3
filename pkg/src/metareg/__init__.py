"""Bayesian random-effects meta-regression in the normal-normal hierarchical model.

Inference is semi-analytic: the coefficient posterior conditional on the
heterogeneity ``tau`` is multivariate normal, and the marginal posterior of
``tau`` is available in closed form up to normalization.  Coefficient
marginals are then discrete normal mixtures over a divergence-controlled
grid of ``tau`` support points.
"""

from metareg.effect_sizes import (
    EffectEstimate,
    TwoByTwoTable,
    log_odds_ratio,
    log_ratio_of_means,
    logit_proportion,
)
from metareg.model import (
    DesignMatrix,
    ImproperUniform,
    NormalPrior,
    RegressionProblem,
    StudyDataset,
    TauPrior,
    ValidationError,
    build_indicator_design,
    center_covariable,
    transform_normal_prior,
    validate_problem,
)
from metareg.nnhm import (
    MvnMoments,
    conditional_beta_posterior,
    conditional_marginal_likelihood,
    marginal_likelihood,
    tau_log_marginal_unnorm,
)
from metareg.grid import PosteriorGrid, build_grid, symmetrized_kl_mvn
from metareg.inference import (
    FitResult,
    ScalarMixture,
    SummaryTable,
    coefficient_marginal,
    credible_interval,
    fit,
    linear_combination,
    map_estimates,
    sample_posterior,
    shrinkage,
    summarize,
    tau_cdf,
    tau_density,
    tau_interval,
    tau_quantile,
)
from metareg.selection import (
    ModelSpace,
    enumerate_models,
    inclusion_probabilities,
    median_probability_model,
    model_averaged_combination,
    model_prior,
    posterior_model_probs,
    score_models,
)

__version__ = "0.1.0"

__all__ = [
    "DesignMatrix",
    "EffectEstimate",
    "FitResult",
    "ImproperUniform",
    "ModelSpace",
    "MvnMoments",
    "NormalPrior",
    "PosteriorGrid",
    "RegressionProblem",
    "ScalarMixture",
    "StudyDataset",
    "SummaryTable",
    "TauPrior",
    "TwoByTwoTable",
    "ValidationError",
    "build_grid",
    "build_indicator_design",
    "center_covariable",
    "coefficient_marginal",
    "conditional_beta_posterior",
    "conditional_marginal_likelihood",
    "credible_interval",
    "enumerate_models",
    "fit",
    "inclusion_probabilities",
    "linear_combination",
    "log_odds_ratio",
    "log_ratio_of_means",
    "logit_proportion",
    "map_estimates",
    "marginal_likelihood",
    "median_probability_model",
    "model_averaged_combination",
    "model_prior",
    "posterior_model_probs",
    "sample_posterior",
    "score_models",
    "shrinkage",
    "summarize",
    "symmetrized_kl_mvn",
    "tau_cdf",
    "tau_density",
    "tau_interval",
    "tau_quantile",
    "tau_log_marginal_unnorm",
    "transform_normal_prior",
    "validate_problem",
]
