"""Doubly-robust average and quantile treatment effects that combine a small
labeled sample with a large unlabeled sample."""

from .data import Dataset, FoldPlan, load_csv, mcar_permutation_test, save_csv, split_folds
from .errors import (
    ConfigurationError,
    ConvergenceError,
    DegenerateError,
    ParseError,
    RankError,
    SchemaError,
    SsCausalError,
    ValidationError,
)
from .estimators import (
    EstimateReport,
    NuisanceBundle,
    crossfit_outcome,
    estimate_ate,
    estimate_mu,
    estimate_qte,
    estimate_theta,
    fit_propensity,
)
from .sim import DgpSpec, McConfig, McReport, TrueTargets, render_tables, run_monte_carlo, true_targets

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "FoldPlan",
    "load_csv",
    "save_csv",
    "split_folds",
    "mcar_permutation_test",
    "SsCausalError",
    "ParseError",
    "SchemaError",
    "ValidationError",
    "RankError",
    "DegenerateError",
    "ConvergenceError",
    "ConfigurationError",
    "NuisanceBundle",
    "EstimateReport",
    "fit_propensity",
    "crossfit_outcome",
    "estimate_mu",
    "estimate_ate",
    "estimate_theta",
    "estimate_qte",
    "DgpSpec",
    "McConfig",
    "McReport",
    "TrueTargets",
    "true_targets",
    "run_monte_carlo",
    "render_tables",
    "__version__",
]
