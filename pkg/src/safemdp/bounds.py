"""Feasibility certificate, Bellman residual and sub-optimality bounds."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .augmentation import AugmentedMdp, augmented_return, penalized_return
from .dp import bellman_optimal_apply, evaluate_policy_aug
from .estimation import ErrorBound, true_mismeasure
from .mdp_core import AUGMENTED, PLAIN, PolicyTable, TabularMdp, policy_values
from .saddle import FEASIBILITY_TOL, SaddleSolution


class InvalidErrorBound(ValueError):
    """The supplied error bound does not dominate the true mis-measure."""


@dataclass(frozen=True)
class PerformanceReport:
    penalty_term: float
    br_upper: float
    suboptimality_bound: float
    feasible_certified: bool
    br_exact: Optional[float] = None

    def to_json(self) -> dict:
        return {
            "penalty_term": self.penalty_term,
            "br_upper": self.br_upper,
            "suboptimality_bound": self.suboptimality_bound,
            "br_exact": self.br_exact,
            "feasible_certified": self.feasible_certified,
        }


def _augmented(policy: PolicyTable) -> PolicyTable:
    return policy.lift() if policy.state_space == PLAIN else policy


def _track1(policy: PolicyTable) -> PolicyTable:
    return policy.track(1) if policy.state_space == AUGMENTED else policy


def discounted_error(sim_mdp: TabularMdp, error: ErrorBound, policy: PolicyTable) -> np.ndarray:
    """``E_sim[sum_k gamma^k e(x_k, a_k) | x_0 = x]`` for every start state ``x``."""
    return policy_values(sim_mdp, _track1(policy), error.e)


def surrogate_gap(
    true_mdp: TabularMdp,
    sim_mdp: TabularMdp,
    error: ErrorBound,
    policy: PolicyTable,
    lam: float,
    m_b: float,
) -> float:
    """``L(mu, lambda) - L_hat(mu, lambda)``; non-negative when ``error`` is valid."""
    if not error.covers(true_mismeasure(true_mdp, sim_mdp), tol=1e-12):
        raise InvalidErrorBound("error bound is smaller than the true mis-measure somewhere")
    policy = _augmented(policy)
    exact = augmented_return(AugmentedMdp.lagrangian(sim_mdp, true_mdp, lam), policy) - lam * m_b
    surrogate = augmented_return(AugmentedMdp.penalized(sim_mdp, error, lam), policy) - lam * m_b
    return exact - surrogate


def feasibility_certificate(sim_mdp: TabularMdp, error: ErrorBound, policy: PolicyTable, m_b: float) -> bool:
    """Whether the track-1 policy's penalized simulated return reaches ``m_b``."""
    return penalized_return(sim_mdp, error, _track1(policy)) >= m_b - FEASIBILITY_TOL


def bellman_residual(
    true_mdp: TabularMdp,
    sim_mdp: TabularMdp,
    error: ErrorBound,
    policy: PolicyTable,
    lam: float,
) -> float:
    """``||T_lambda[V^mu] - V^mu||_inf`` under the true-model augmented MDP.

    ``error`` is accepted for signature symmetry with ``br_upper_bound``; the
    exact residual does not depend on it.
    """
    aug = AugmentedMdp.lagrangian(sim_mdp, true_mdp, lam)
    v = evaluate_policy_aug(aug, _augmented(policy))
    return float(np.max(np.abs(bellman_optimal_apply(aug, v).values - v.values)))


def _br_terms(sim_mdp: TabularMdp, error: ErrorBound, policy: PolicyTable, lam: float):
    g, r = sim_mdp.gamma, sim_mdp.r_max
    expected = discounted_error(sim_mdp, error, policy)
    spread = 2.0 * (1.0 + g) * g * lam * r / (1.0 - g)
    local = 4.0 * g * lam * r / (1.0 - g)
    return expected, spread, local


def br_upper_bound(sim_mdp: TabularMdp, error: ErrorBound, policy: PolicyTable, lam: float) -> float:
    """Computable upper bound on the Bellman residual from simulated quantities.

    ``max_{x,a} [2(1+g) g lam r_max/(1-g) E_sim[sum g^k e | x_0=x] + 4 g lam r_max/(1-g) e(x,a)]``.
    The expectation depends on ``x`` only, so the inner max over ``a`` is
    taken on ``e`` alone.
    """
    expected, spread, local = _br_terms(sim_mdp, error, policy, lam)
    return float(np.max(spread * expected + local * error.e.max(axis=1)))


def suboptimality_bound(
    sim_mdp: TabularMdp,
    error: ErrorBound,
    solution: SaddleSolution,
    true_mdp: Optional[TabularMdp] = None,
) -> PerformanceReport:
    """Bound on the true-return shortfall of the returned policy.

    ``penalty + br_upper / (1 - gamma)``, where ``penalty`` is
    ``2 g lam r_max/(1-g) * E_sim[sum g^k e | P_0]`` along the track-1 policy.
    With ``true_mdp`` the exact residual is attached for comparison.
    """
    lam = solution.lambda_hat
    g = sim_mdp.gamma
    policy = solution.policy_hat
    start_error = float(sim_mdp.p0 @ discounted_error(sim_mdp, error, policy))
    penalty = 2.0 * g * lam * sim_mdp.r_max / (1.0 - g) * start_error
    br_up = br_upper_bound(sim_mdp, error, policy, lam)
    br_exact = None if true_mdp is None else bellman_residual(true_mdp, sim_mdp, error, policy, lam)
    return PerformanceReport(
        penalty_term=penalty,
        br_upper=br_up,
        suboptimality_bound=penalty + br_up / (1.0 - g),
        feasible_certified=feasibility_certificate(sim_mdp, error, policy, solution.m_b),
        br_exact=br_exact,
    )
