"""Baseline-safe policy computation for tabular MDPs from a simulated model and an error bound."""

from .augmentation import AugmentedMdp, augmented_return, lagrangian_identity_check, penalized_return
from .bounds import (
    PerformanceReport,
    bellman_residual,
    br_upper_bound,
    feasibility_certificate,
    suboptimality_bound,
    surrogate_gap,
)
from .dp import BellmanConfig, bellman_optimal_apply, bellman_policy_apply, evaluate_policy_aug, value_iteration
from .estimation import (
    ErrorBound,
    TrajectoryBatch,
    estimate_model,
    l1_error_bound,
    simulate_trajectories,
    true_mismeasure,
)
from .mdp_core import (
    OccupationMeasure,
    PolicyTable,
    TabularMdp,
    ValueTable,
    baseline_threshold,
    occupation_measure,
    policy_return,
    validate_mdp,
)
from .saddle import SaddleConfig, SaddleSolution, inner_policy_iteration, solve_saddle

__all__ = [
    "AugmentedMdp",
    "BellmanConfig",
    "ErrorBound",
    "OccupationMeasure",
    "PerformanceReport",
    "PolicyTable",
    "SaddleConfig",
    "SaddleSolution",
    "TabularMdp",
    "TrajectoryBatch",
    "ValueTable",
    "augmented_return",
    "baseline_threshold",
    "bellman_optimal_apply",
    "bellman_policy_apply",
    "bellman_residual",
    "br_upper_bound",
    "estimate_model",
    "evaluate_policy_aug",
    "feasibility_certificate",
    "inner_policy_iteration",
    "l1_error_bound",
    "lagrangian_identity_check",
    "occupation_measure",
    "penalized_return",
    "policy_return",
    "simulate_trajectories",
    "solve_saddle",
    "suboptimality_bound",
    "surrogate_gap",
    "true_mismeasure",
    "validate_mdp",
    "value_iteration",
]
