"""Brute-force ground truth for small instances.

Everything here is independent of the production solver path: policies are
enumerated exhaustively and evaluated in batches, the constrained optimum is
found by scanning deterministic policies and by the occupation-measure LP, and
dual functions are evaluated on dense multiplier grids.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from .augmentation import AugmentedMdp
from .estimation import ErrorBound
from .mdp_core import AUGMENTED, PLAIN, PolicyTable, TabularMdp, policy_matrix
from .saddle import SaddleConfig, dual_value_and_subgradient

ENUMERATION_LIMIT = 10**7
LP_TOL = 1e-7
_CHUNK = 4096


class EnumerationTooLarge(ValueError):
    pass


class InfeasibleConstraint(ValueError):
    """No stationary policy reaches the required true-model return."""


@dataclass(frozen=True, eq=False)
class OracleResult:
    """Exact constrained optimum and the matching dual quantities.

    ``primal_value`` and ``dual_value`` refer to the two-track problem that the
    Lagrangian dualizes (track policies may differ), so ``duality_gap`` is a
    genuine primal/dual comparison.  ``best_policy`` is the best deterministic
    plain policy meeting the true-model constraint, with simulated return
    ``best_policy_value``.
    """

    best_policy: PolicyTable
    primal_value: float
    dual_value: float
    duality_gap: float
    lambda_star: float
    enumerated_count: int
    best_policy_value: float
    occupation: Optional[np.ndarray] = None


# ---------------------------------------------------------------- generators


def random_mdp(
    n_states: int,
    n_actions: int,
    gamma: float,
    seed: int,
    r_max: float = 1.0,
    concentration: float = 1.0,
) -> TabularMdp:
    """Seeded random MDP: Dirichlet transition rows, rewards uniform in ``[-r_max, r_max]``."""
    rng = np.random.default_rng(seed)
    transitions = rng.dirichlet(np.full(n_states, concentration), size=(n_states, n_actions))
    rewards = rng.uniform(-r_max, r_max, size=(n_states, n_actions))
    return TabularMdp(rewards, transitions, gamma, r_max)


def perturb_transitions(mdp: TabularMdp, weight: float, seed: int) -> TabularMdp:
    """Mix every transition row with a random one: ``(1 - w) P + w Q``."""
    if not 0.0 <= weight <= 1.0:
        raise ValueError("weight must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    noise = rng.dirichlet(np.ones(mdp.n_states), size=(mdp.n_states, mdp.n_actions))
    mixed = (1.0 - weight) * mdp.transitions + weight * noise
    return mdp.replace(transitions=mixed / mixed.sum(axis=2, keepdims=True))


def monte_carlo_return(
    mdp: TabularMdp,
    policy: PolicyTable,
    n_episodes: int,
    horizon: int,
    seed: int,
) -> tuple[float, float]:
    """Mean truncated discounted return over sampled episodes and its standard error."""
    rng = np.random.default_rng(seed)
    n, m = mdp.n_states, mdp.n_actions
    probs = policy_matrix(mdp, policy)
    # Offsetting row k by k makes all rows one increasing array, so a single
    # searchsorted samples every episode at once.
    action_cdf = _offset_cdf(probs)
    next_cdf = _offset_cdf(mdp.transitions.reshape(n * m, n))
    states = _sample_rows(_offset_cdf(mdp.p0[None, :]), np.zeros(n_episodes, dtype=np.int64), rng.random(n_episodes))
    total = np.zeros(n_episodes)
    discount = 1.0
    for _ in range(horizon):
        actions = _sample_rows(action_cdf, states, rng.random(n_episodes))
        total += discount * mdp.rewards[states, actions]
        states = _sample_rows(next_cdf, states * m + actions, rng.random(n_episodes))
        discount *= mdp.gamma
    return float(total.mean()), float(total.std(ddof=1) / math.sqrt(n_episodes))


def _offset_cdf(rows: np.ndarray) -> tuple[np.ndarray, int]:
    cdf = np.cumsum(rows, axis=1)
    cdf[:, -1] = 1.0
    return (cdf + np.arange(cdf.shape[0])[:, None]).ravel(), cdf.shape[1]


def _sample_rows(offset_cdf: tuple[np.ndarray, int], row: np.ndarray, u: np.ndarray) -> np.ndarray:
    flat, width = offset_cdf
    idx = np.searchsorted(flat, row + u, side="right") - row * width
    return np.minimum(idx, width - 1)


# --------------------------------------------------------------- enumeration


def _scanned_states(n_states: int, augmented: bool) -> int:
    return 2 * n_states if augmented else n_states


def _check_guard(n_actions: int, states: int) -> int:
    count = n_actions**states
    if count > ENUMERATION_LIMIT:
        raise EnumerationTooLarge(f"{n_actions}^{states} = {count} policies exceeds {ENUMERATION_LIMIT}")
    return count


def _action_tables(n_states: int, n_actions: int, augmented: bool) -> np.ndarray:
    states = _scanned_states(n_states, augmented)
    _check_guard(n_actions, states)
    return np.array(list(itertools.product(range(n_actions), repeat=states)), dtype=np.int64).reshape(-1, states)


def enumerate_policies(n_states: int, n_actions: int, augmented: bool = False) -> Iterator[PolicyTable]:
    """Every deterministic policy exactly once, in lexicographic order of the action tables."""
    states = _scanned_states(n_states, augmented)
    _check_guard(n_actions, states)
    space = AUGMENTED if augmented else PLAIN
    for actions in itertools.product(range(n_actions), repeat=states):
        yield PolicyTable.deterministic(actions, space)


def batched_values(model, tables: np.ndarray, stage_rewards: Sequence[np.ndarray] | None = None) -> np.ndarray:
    """Exact values of many deterministic policies at once.

    Returns shape ``(n_policies, n_states)``, or ``(n_rewards, n_policies,
    n_states)`` when several ``stage_rewards`` are supplied.
    """
    rewards = [model.rewards] if stage_rewards is None else [np.asarray(r, float) for r in stage_rewards]
    n = model.rewards.shape[0]
    rows = np.arange(n)
    eye = np.eye(n)
    out = np.empty((len(rewards), tables.shape[0], n))
    for start in range(0, tables.shape[0], _CHUNK):
        acts = tables[start:start + _CHUNK]
        lhs = eye - model.gamma * model.transitions[rows, acts]
        rhs = np.stack([r[rows, acts] for r in rewards], axis=-1)
        out[:, start:start + _CHUNK] = np.moveaxis(np.linalg.solve(lhs, rhs), -1, 0)
    return out[0] if stage_rewards is None else out


def augmented_policy_returns(aug: AugmentedMdp) -> tuple[np.ndarray, np.ndarray]:
    """Action tables of all deterministic augmented policies and their augmented returns."""
    tables = _action_tables(aug.n_base, aug.n_actions, augmented=True)
    return tables, batched_values(aug, tables) @ aug.p0


def _lagrangian_lines(true_mdp: TabularMdp, sim_mdp: TabularMdp, m_b: float) -> tuple[np.ndarray, np.ndarray]:
    """Intercept and slope of ``lambda -> L(mu, lambda)`` for every deterministic augmented policy."""
    aug = AugmentedMdp.lagrangian(sim_mdp, true_mdp, 0.0)
    one = aug.with_lambda(1.0)
    tables = _action_tables(sim_mdp.n_states, sim_mdp.n_actions, augmented=True)
    zero_ret, one_ret = batched_values(aug, tables, [aug.rewards, one.rewards]) @ aug.p0
    return zero_ret, one_ret - zero_ret - m_b


def upper_envelope(intercept: np.ndarray, slope: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lines that attain ``max_k (intercept_k + lambda slope_k)`` for some real ``lambda``."""
    order = np.lexsort((intercept, slope))
    a, b = intercept[order], slope[order]
    # Among equal slopes only the largest intercept (last after sorting) matters.
    keep = np.append(b[1:] != b[:-1], True)
    a, b = a[keep], b[keep]
    hull: list[int] = []
    for k in range(a.size):
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            # j is dominated when line k overtakes i no later than j does.
            if (a[k] - a[i]) * (b[j] - b[i]) >= (a[j] - a[i]) * (b[k] - b[i]):
                hull.pop()
            else:
                break
        hull.append(k)
    return a[hull], b[hull]


def _envelope_values(intercept: np.ndarray, slope: np.ndarray, grid: np.ndarray) -> np.ndarray:
    a, b = upper_envelope(intercept, slope)
    out = np.empty(grid.size)
    for start in range(0, grid.size, 1024):
        lams = grid[start:start + 1024]
        out[start:start + 1024] = (a[None, :] + lams[:, None] * b[None, :]).max(axis=1)
    return out


def _lines_min_max(intercept: np.ndarray, slope: np.ndarray, grid: np.ndarray) -> tuple[float, float]:
    f = _envelope_values(intercept, slope, grid)
    k = int(np.argmin(f))
    return float(grid[k]), float(f[k])


def lambda_grid(lambda_max: float, step: float = 1e-3) -> np.ndarray:
    """Evenly spaced multipliers from 0 to ``lambda_max`` inclusive."""
    return np.linspace(0.0, lambda_max, int(round(lambda_max / step)) + 1)


# ------------------------------------------------------------- exact optima


def occupation_lp(true_mdp: TabularMdp, sim_mdp: TabularMdp, m_b: float):
    """Two-track occupation-measure LP with the true-model return constraint.

    Variables are ``beta(x, i, a)`` laid out as ``(x + i n) * m + a``.  Flow
    constraints are ``sum_a beta(y,i,a) - gamma sum_{x,a} P^aug(y,i|x,i,a)
    beta(x,i,a) = (1 - gamma) P_0^aug(y,i)``.  The objective is the track-0
    return and the track-1 return must reach ``m_b``.
    Returns the scipy result.
    """
    aug = AugmentedMdp.lagrangian(sim_mdp, true_mdp, 1.0)
    g = aug.gamma
    s, m = aug.n_states, aug.n_actions
    n = aug.n_base
    flow = np.zeros((s, s * m))
    for x in range(s):
        for a in range(m):
            col = x * m + a
            flow[x, col] += 1.0
            flow[:, col] -= g * aug.transitions[x, a]
    base_r = np.vstack([sim_mdp.rewards, sim_mdp.rewards])
    track = np.repeat(np.arange(s) >= n, m)
    weights = 2.0 * base_r.ravel() / (1.0 - g)
    objective = np.where(~track, weights, 0.0)
    constraint = np.where(track, weights, 0.0)
    return linprog(
        -objective,
        A_ub=-constraint[None, :],
        b_ub=[-m_b],
        A_eq=flow,
        b_eq=(1.0 - g) * aug.p0,
        bounds=(0, None),
        method="highs",
        options={"primal_feasibility_tolerance": LP_TOL, "dual_feasibility_tolerance": LP_TOL},
    )


def exact_constrained_optimum(true_mdp: TabularMdp, sim_mdp: TabularMdp, m_b: float) -> OracleResult:
    """Maximize simulated return subject to true return >= ``m_b``.

    Deterministic plain policies are scanned exhaustively; the occupation-
    measure LP gives the randomized two-track optimum and its multiplier.
    """
    tables = _action_tables(sim_mdp.n_states, sim_mdp.n_actions, augmented=False)
    sim_ret = batched_values(sim_mdp, tables) @ sim_mdp.p0
    true_ret = batched_values(true_mdp, tables) @ true_mdp.p0
    feasible = true_ret >= m_b - LP_TOL
    if not feasible.any():
        raise InfeasibleConstraint(f"no policy reaches true return {m_b:.6g} (best {true_ret.max():.6g})")
    masked = np.where(feasible, sim_ret, -np.inf)
    k = int(np.argmax(masked))

    res = occupation_lp(true_mdp, sim_mdp, m_b)
    if res.status != 0:
        raise InfeasibleConstraint(f"occupation LP failed: {res.message}")
    primal = -float(res.fun)
    lam_star = max(0.0, -float(res.ineqlin.marginals[0]))
    intercept, slope = _lagrangian_lines(true_mdp, sim_mdp, m_b)
    dual = float(np.max(intercept + lam_star * slope))
    return OracleResult(
        best_policy=PolicyTable.deterministic(tables[k]),
        primal_value=primal,
        dual_value=dual,
        duality_gap=abs(primal - dual),
        lambda_star=lam_star,
        enumerated_count=int(tables.shape[0]),
        best_policy_value=float(sim_ret[k]),
        occupation=np.asarray(res.x),
    )


def dual_grid_search(
    sim_mdp: TabularMdp,
    error: ErrorBound,
    m_b: float,
    grid: Sequence[float],
    cfg: SaddleConfig = SaddleConfig(),
) -> tuple[float, float]:
    """Minimize ``f(lambda) = max_mu L_hat(mu, lambda)`` over ``grid``.

    Each point is solved by policy iteration, warm-started from its
    neighbour.  Returns ``(lambda_star, f_star)``.
    """
    values = np.asarray(grid, dtype=float)
    if values.size == 0:
        raise ValueError("grid must be nonempty")
    if np.any(np.diff(values) < 0):
        raise ValueError("grid must be sorted")
    warm = None
    best = (math.nan, math.inf)
    for lam in values:
        f, _, warm = dual_value_and_subgradient(sim_mdp, error, float(lam), m_b, cfg, warm)
        if f < best[1]:
            best = (float(lam), f)
    return best


def dual_curve(sim_mdp: TabularMdp, error: ErrorBound, m_b: float, grid: Sequence[float]) -> np.ndarray:
    """``f(lambda)`` on ``grid`` from exhaustive augmented enumeration."""
    aug = AugmentedMdp.penalized(sim_mdp, error, 0.0)
    one = aug.with_lambda(1.0)
    tables = _action_tables(sim_mdp.n_states, sim_mdp.n_actions, augmented=True)
    zero_ret, one_ret = batched_values(aug, tables, [aug.rewards, one.rewards]) @ aug.p0
    slope = one_ret - zero_ret - m_b
    return _envelope_values(zero_ret, slope, np.asarray(grid, dtype=float))


def strong_duality_gap(true_mdp: TabularMdp, sim_mdp: TabularMdp, m_b: float, grid: Sequence[float]) -> float:
    """``|min_lambda max_mu L - max_mu min_lambda L|`` computed numerically.

    The dual side scans ``grid`` with exhaustive enumeration of deterministic
    augmented policies; the primal side is the occupation-measure LP.
    """
    res = occupation_lp(true_mdp, sim_mdp, m_b)
    if res.status != 0:
        raise InfeasibleConstraint(f"occupation LP failed: {res.message}")
    intercept, slope = _lagrangian_lines(true_mdp, sim_mdp, m_b)
    _, dual = _lines_min_max(intercept, slope, np.asarray(grid, dtype=float))
    return abs(dual - (-float(res.fun)))
