"""Dual (projected subgradient) solver for the penalized max-min problem.

For each multiplier the inner loop runs exact policy iteration on the
penalized augmented MDP; the outer loop moves the multiplier against the
constraint slack with diminishing steps ``alpha0 / (j + 1)`` and keeps the
best dual value seen so far.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional

import numpy as np

from .augmentation import AugmentedMdp, penalized_return
from .dp import BellmanConfig, evaluate_policy_aug, greedy_improve
from .estimation import ErrorBound
from .mdp_core import AUGMENTED, PolicyTable, TabularMdp, ValueTable, policy_return

log = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-9


@dataclass(frozen=True)
class SaddleConfig:
    """Outer-loop settings.

    ``lambda_max`` defaults to ``4 r_max / (1 - gamma)`` and ``step_alpha0``
    to ``(1 - gamma) / r_max`` once a model is known (see ``resolve``).
    """

    lambda0: float = 0.0
    lambda_max: Optional[float] = None
    step_alpha0: Optional[float] = None
    outer_tol: float = 1e-5
    outer_patience: int = 25
    max_outer_iters: int = 5000
    literal_best_lambda: bool = True
    bellman: BellmanConfig = field(default_factory=BellmanConfig)

    def __post_init__(self):
        if self.lambda0 < 0:
            raise ValueError("lambda0 must be non-negative")
        if self.lambda_max is not None and not self.lambda_max > 0:
            raise ValueError("lambda_max must be positive")
        if self.step_alpha0 is not None and not self.step_alpha0 > 0:
            raise ValueError("step_alpha0 must be positive")
        if not self.outer_tol > 0 or self.outer_patience < 1 or self.max_outer_iters < 1:
            raise ValueError("invalid outer-loop termination settings")

    def resolve(self, mdp: TabularMdp) -> "SaddleConfig":
        horizon_scale = mdp.r_max / (1.0 - mdp.gamma)
        return replace(
            self,
            lambda_max=4.0 * horizon_scale if self.lambda_max is None else self.lambda_max,
            step_alpha0=1.0 / horizon_scale if self.step_alpha0 is None else self.step_alpha0,
        )

    def step(self, j: int) -> float:
        # Harmonic steps: non-negative, divergent sum, summable squares.
        return self.step_alpha0 / (j + 1)


@dataclass(frozen=True, eq=False)
class SaddleSolution:
    policy_hat: PolicyTable
    lambda_hat: float
    dual_value: float
    f_min_trace: list
    lambda_trace: list
    subgradient_trace: list
    feasible: bool
    inner_iterations: list
    subgradient_hat: float
    lambda_max: float
    converged: bool
    simulated_return: float
    penalized_return: float
    m_b: float

    @property
    def outer_iterations(self) -> int:
        return len(self.lambda_trace) - 1

    @property
    def deployed_policy(self) -> PolicyTable:
        """Track-1 restriction: the certified policy run in the true system."""
        return self.policy_hat.track(1)

    def to_json(self) -> dict:
        return {
            "lambda_hat": self.lambda_hat,
            "m_b": self.m_b,
            "lambda_max": self.lambda_max,
            "dual_value": self.dual_value,
            "feasible": self.feasible,
            "converged": self.converged,
            "subgradient_hat": self.subgradient_hat,
            "simulated_return": self.simulated_return,
            "penalized_return": self.penalized_return,
            "policy": self.policy_hat.to_json(),
            "traces": {
                "lambda": list(self.lambda_trace),
                "f_min": list(self.f_min_trace),
                "subgradient": list(self.subgradient_trace),
                "inner_iterations": list(self.inner_iterations),
            },
        }


def _sweep_limit(aug: AugmentedMdp) -> int:
    # Number of deterministic augmented policies, capped to stay an int of sane size.
    return int(min(aug.n_actions ** min(aug.n_states, 60), 10**18))


def inner_policy_iteration(
    aug_penalized: AugmentedMdp,
    initial_policy: PolicyTable,
    cfg: SaddleConfig = SaddleConfig(),
    on_sweep: Optional[Callable[[PolicyTable, ValueTable], None]] = None,
) -> tuple[PolicyTable, ValueTable, int]:
    """Exact policy iteration until the greedy step leaves the policy unchanged.

    Ties are sticky, so an unchanged policy is exactly the stopping condition
    of equal successive value tables.  ``on_sweep`` sees every evaluated
    (policy, values) pair, starting with the initial policy.
    """
    if initial_policy.state_space != AUGMENTED:
        raise ValueError("inner policy iteration runs over augmented policies")
    policy = initial_policy
    values = evaluate_policy_aug(aug_penalized, policy)
    if on_sweep:
        on_sweep(policy, values)
    limit = _sweep_limit(aug_penalized)
    sweeps = 0
    while True:
        sweeps += 1
        improved = greedy_improve(aug_penalized, values, policy, cfg.bellman)
        if improved.same_as(policy):
            return policy, values, sweeps
        if sweeps > limit:
            raise RuntimeError("policy iteration exceeded the number of deterministic policies")
        policy = improved
        values = evaluate_policy_aug(aug_penalized, policy)
        if on_sweep:
            on_sweep(policy, values)


class _DualPoint(NamedTuple):
    lam: float
    f: float
    g: float
    policy: PolicyTable
    sweeps: int


def _initial_policy(sim: TabularMdp) -> PolicyTable:
    return PolicyTable.deterministic(np.zeros(2 * sim.n_states, dtype=np.int64), AUGMENTED)


def _dual_point(sim, error, lam, m_b, cfg, warm: Optional[PolicyTable]) -> _DualPoint:
    aug = AugmentedMdp.penalized(sim, error, lam)
    warm = _initial_policy(sim) if warm is None else warm
    policy, values, sweeps = inner_policy_iteration(aug, warm, cfg)
    if lam == 0.0:
        # Track-1 rewards vanish at zero, so every track-1 policy is a maximizer.
        # Keep the simulated optimum there when it already certifies; otherwise
        # take the maximizer shared by all positive multipliers (lambda = 1),
        # which gives the right derivative of the dual.
        track0 = policy.track(0)
        if penalized_return(sim, error, track0) >= m_b - FEASIBILITY_TOL:
            policy = PolicyTable.from_tracks(track0, track0)
        else:
            refined, _, more = inner_policy_iteration(aug.with_lambda(1.0), policy, cfg)
            policy = PolicyTable.from_tracks(track0, refined.track(1))
            sweeps += more
    f = float(aug.p0 @ values.values) - lam * m_b
    g = penalized_return(sim, error, policy.track(1)) - m_b
    return _DualPoint(lam, f, g, policy, sweeps)


def dual_value_and_subgradient(
    sim_mdp: TabularMdp,
    error: ErrorBound,
    lam: float,
    m_b: float,
    cfg: SaddleConfig = SaddleConfig(),
    initial_policy: Optional[PolicyTable] = None,
) -> tuple[float, float, PolicyTable]:
    """Dual function ``f(lambda) = max_mu L_hat(mu, lambda)`` and a subgradient.

    The subgradient is the penalized simulated return of the maximizer's
    track-1 policy minus ``m_b``.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    point = _dual_point(sim_mdp, error, float(lam), m_b, cfg, initial_policy)
    return point.f, point.g, point.policy


def solve_saddle(
    sim_mdp: TabularMdp,
    error: ErrorBound,
    m_b: float,
    cfg: SaddleConfig = SaddleConfig(),
) -> SaddleSolution:
    """Projected subgradient descent on the multiplier with best-dual bookkeeping.

    A candidate multiplier replaces the current one only when its dual value
    improves on the best seen so far (``literal_best_lambda``); otherwise the
    current multiplier is kept and the next, shorter step is tried from it.
    The loop stops once the proposed step stays below ``outer_tol`` for
    ``outer_patience`` consecutive iterations.
    """
    if not np.isfinite(m_b):
        raise ValueError("m_b must be finite")
    cfg = cfg.resolve(sim_mdp)
    lam_max = cfg.lambda_max
    current = _dual_point(sim_mdp, error, min(cfg.lambda0, lam_max), m_b, cfg, None)
    best = current
    f_min = current.f
    lambda_trace, f_min_trace = [current.lam], [f_min]
    subgradient_trace, inner_iterations = [current.g], [current.sweeps]
    quiet, converged = 0, False

    for j in range(cfg.max_outer_iters):
        proposal = float(np.clip(current.lam - cfg.step(j) * current.g, 0.0, lam_max))
        step = abs(proposal - current.lam)
        candidate = _dual_point(sim_mdp, error, proposal, m_b, cfg, current.policy)
        inner_iterations.append(candidate.sweeps)
        if candidate.f <= f_min:
            f_min = candidate.f
            best = current = candidate
        elif not cfg.literal_best_lambda:
            current = candidate
        lambda_trace.append(current.lam)
        f_min_trace.append(f_min)
        subgradient_trace.append(current.g)
        quiet = quiet + 1 if step <= cfg.outer_tol else 0
        if quiet >= cfg.outer_patience:
            converged = True
            break

    feasible = best.g >= -FEASIBILITY_TOL
    if not feasible:
        log.info("penalized constraint not certified: lambda=%.6g, slack=%.6g", best.lam, best.g)
    policy = best.policy
    return SaddleSolution(
        policy_hat=policy,
        lambda_hat=best.lam,
        dual_value=best.f,
        f_min_trace=f_min_trace,
        lambda_trace=lambda_trace,
        subgradient_trace=subgradient_trace,
        feasible=bool(feasible),
        inner_iterations=inner_iterations,
        subgradient_hat=best.g,
        lambda_max=lam_max,
        converged=converged,
        simulated_return=policy_return(sim_mdp, policy.track(0)),
        penalized_return=best.g + m_b,
        m_b=float(m_b),
    )
