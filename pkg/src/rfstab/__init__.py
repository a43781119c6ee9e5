"""Random forests with out-of-bag stability diagnostics and prediction intervals."""

from .dataset import DataError, Dataset, load_csv, split, synthetic_cauchy, synthetic_light_tail
from .evaluation import CoverageReport, ExperimentConfig, coverage_trend, empirical_cdf, run_coverage
from .forest import (
    Forest,
    ForestConfig,
    ForestError,
    fit,
    fit_loo,
    load_forest,
    oob_predictions,
    predict,
    predict_excluding,
    save_forest,
)
from .intervals import (
    Method,
    PredictionInterval,
    ResidualSet,
    jabs_interval,
    jplus_ab_interval,
    jplus_interval,
    js_interval,
    lower_quantile,
    n_quantile,
    upper_quantile,
)
from .stability import difference_matrix, estimate_stability
from .theory import StabilityBudget, VacuousBudgetError, stability_budget

__all__ = [
    "CoverageReport",
    "DataError",
    "Dataset",
    "ExperimentConfig",
    "Forest",
    "ForestConfig",
    "ForestError",
    "Method",
    "PredictionInterval",
    "ResidualSet",
    "StabilityBudget",
    "VacuousBudgetError",
    "coverage_trend",
    "difference_matrix",
    "empirical_cdf",
    "estimate_stability",
    "fit",
    "fit_loo",
    "jabs_interval",
    "jplus_ab_interval",
    "jplus_interval",
    "js_interval",
    "load_csv",
    "load_forest",
    "lower_quantile",
    "n_quantile",
    "oob_predictions",
    "predict",
    "predict_excluding",
    "run_coverage",
    "save_forest",
    "split",
    "stability_budget",
    "synthetic_cauchy",
    "synthetic_light_tail",
    "upper_quantile",
]
