"""Bellman operators and dynamic-programming primitives.

Every function accepts any model exposing ``rewards`` (states x actions),
``transitions`` (states x actions x states) and ``gamma``: in practice an
``AugmentedMdp`` (whose reward mode and track models decide which operator
is realized) or a plain ``TabularMdp``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp_core import AUGMENTED, PLAIN, PolicyTable, ValueTable, policy_matrix, policy_values


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class BellmanConfig:
    value_iter_tol: float = 1e-10
    max_value_iters: int = 100_000
    tie_tol: float = 1e-9

    def __post_init__(self):
        if not self.value_iter_tol > 0:
            raise ValueError("value_iter_tol must be positive")
        if not self.tie_tol >= 0:
            raise ValueError("tie_tol must be non-negative")
        if self.max_value_iters < 1:
            raise ValueError("max_value_iters must be positive")


def _space(model) -> str:
    return AUGMENTED if hasattr(model, "base_sim") else PLAIN


def _vector(model, v: ValueTable) -> np.ndarray:
    values = v.values
    if values.shape != (model.rewards.shape[0],):
        raise ValueError(f"value table has {values.shape[0]} entries, model has {model.rewards.shape[0]} states")
    return values


def q_values(model, v: ValueTable) -> np.ndarray:
    """One-step lookahead ``r(s, a) + gamma * sum_s' P(s'|s,a) V(s')``."""
    return model.rewards + model.gamma * (model.transitions @ _vector(model, v))


def bellman_optimal_apply(model, v: ValueTable) -> ValueTable:
    return ValueTable(q_values(model, v).max(axis=1), _space(model))


def bellman_policy_apply(model, policy: PolicyTable, v: ValueTable) -> ValueTable:
    probs = policy_matrix(model, policy)
    return ValueTable(np.einsum("sa,sa->s", probs, q_values(model, v)), _space(model))


def evaluate_policy_aug(model, policy: PolicyTable) -> ValueTable:
    """Fixed point of ``T^mu`` by a direct linear solve."""
    return ValueTable(policy_values(model, policy), _space(model))


def value_iteration(model, v0: ValueTable, cfg: BellmanConfig = BellmanConfig()) -> tuple[ValueTable, int]:
    """Iterate the optimal operator until the sup-norm step is below tolerance."""
    v = _vector(model, v0)
    for k in range(1, cfg.max_value_iters + 1):
        nxt = q_values(model, ValueTable(v)).max(axis=1)
        delta = np.max(np.abs(nxt - v)) if v.size else 0.0
        v = nxt
        if delta <= cfg.value_iter_tol:
            return ValueTable(v, _space(model)), k
    raise ConvergenceError(f"value iteration did not reach {cfg.value_iter_tol} in {cfg.max_value_iters} sweeps")


def greedy_improve(model, v: ValueTable, incumbent: PolicyTable, cfg: BellmanConfig = BellmanConfig()) -> PolicyTable:
    """Deterministic greedy policy with sticky ties.

    The incumbent's action is kept wherever it is within ``tie_tol`` of the
    best lookahead value; elsewhere the lowest maximizing index wins.
    """
    q = q_values(model, v)
    n = q.shape[0]
    best = q.max(axis=1)
    attaining = q >= best[:, None] - cfg.tie_tol
    first = attaining.argmax(axis=1)
    if incumbent.is_deterministic:
        current = incumbent.table
        if current.shape != (n,):
            raise ValueError("incumbent does not match the model's state count")
        actions = np.where(attaining[np.arange(n), current], current, first)
    else:
        actions = first
    return PolicyTable.deterministic(actions, _space(model))
