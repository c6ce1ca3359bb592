"""
StateIS: state-based importance sampling for off-policy evaluation.

Drops the action-probability ratios of states that do not influence the
return, testing the dropped factors by covariance, and compares the result
against ordinary, per-decision and incremental importance sampling on
tabular MDPs with exact ground truth.
"""

__version__ = "1.0.0"
__author__ = "Cybrflux"
__email__ = ""
__license__ = "MIT"

from .errors import (
    BudgetExceededError,
    ConfigError,
    DegeneratePolicyError,
    InsufficientSampleError,
    InvalidModelError,
    StateISError,
    SupportViolationError,
    TrajectoryFormatError,
)
from .estimators import (
    ESTIMATORS,
    BoundReport,
    EstimateReport,
    WeightDecomposition,
    decompose_weights,
    empirical_mse_hat,
    estimate_incris,
    estimate_is,
    estimate_pdis,
    estimate_sis,
    negligible_mse_bound,
    variance_upper_bound,
)
from .experiment import ExperimentConfig, ResultRow, load_config, run_experiment, write_results
from .lift import DomainBundle, LiftDomainSpec, build_lift_domain, detect_lift_states
from .mdp import (
    TabularMdp,
    TabularPolicy,
    Trajectory,
    TrajectoryBatch,
    action_ratio,
    sample_batch,
    sample_trajectory,
)
from .oracle import (
    ExactMoments,
    TruthReport,
    enumerate_moments,
    exact_estimator_stats,
    scan_noise,
    true_return_dp,
)
from .reporter import JsonReporter, MarkdownReporter, TerminalReporter
from .search import SearchConfig, SearchResult, search_negligible_set

__all__ = [
    "StateISError",
    "InvalidModelError",
    "ConfigError",
    "TrajectoryFormatError",
    "SupportViolationError",
    "DegeneratePolicyError",
    "InsufficientSampleError",
    "BudgetExceededError",
    "TabularMdp",
    "TabularPolicy",
    "Trajectory",
    "TrajectoryBatch",
    "sample_trajectory",
    "sample_batch",
    "action_ratio",
    "LiftDomainSpec",
    "DomainBundle",
    "build_lift_domain",
    "detect_lift_states",
    "EstimateReport",
    "WeightDecomposition",
    "BoundReport",
    "ESTIMATORS",
    "decompose_weights",
    "estimate_is",
    "estimate_pdis",
    "estimate_incris",
    "estimate_sis",
    "empirical_mse_hat",
    "variance_upper_bound",
    "negligible_mse_bound",
    "SearchConfig",
    "SearchResult",
    "search_negligible_set",
    "TruthReport",
    "ExactMoments",
    "true_return_dp",
    "enumerate_moments",
    "exact_estimator_stats",
    "scan_noise",
    "ExperimentConfig",
    "ResultRow",
    "load_config",
    "run_experiment",
    "write_results",
    "TerminalReporter",
    "MarkdownReporter",
    "JsonReporter",
]
