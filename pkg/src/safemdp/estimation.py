"""Simulated model construction from baseline trajectories and L1 error bounds."""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from .mdp_core import PLAIN, PolicyTable, TabularMdp, policy_matrix


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """Observed ``(x, a, y)`` transitions and the visit counts ``N(x, a)``."""

    transitions_observed: np.ndarray
    counts: np.ndarray

    @classmethod
    def from_triples(cls, triples, n_states: int, n_actions: int) -> "TrajectoryBatch":
        obs = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        if obs.size:
            xs, acts, ys = obs.T
            if xs.min() < 0 or ys.min() < 0 or xs.max() >= n_states or ys.max() >= n_states:
                raise ValueError("state index out of range in trajectory data")
            if acts.min() < 0 or acts.max() >= n_actions:
                raise ValueError("action index out of range in trajectory data")
        counts = np.zeros((n_states, n_actions), dtype=np.int64)
        np.add.at(counts, (obs[:, 0], obs[:, 1]), 1)
        obs.setflags(write=False)
        counts.setflags(write=False)
        return cls(obs, counts)

    @property
    def n_states(self) -> int:
        return self.counts.shape[0]

    @property
    def n_actions(self) -> int:
        return self.counts.shape[1]

    def next_state_counts(self) -> np.ndarray:
        n, m = self.counts.shape
        out = np.zeros((n, m, n), dtype=np.int64)
        obs = self.transitions_observed
        np.add.at(out, (obs[:, 0], obs[:, 1], obs[:, 2]), 1)
        return out


@dataclass(frozen=True, eq=False)
class ErrorBound:
    """Per-pair upper bound ``e(x, a)`` on ``||P(.|x,a) - P_hat(.|x,a)||_1``."""

    e: np.ndarray

    def __post_init__(self):
        e = np.array(self.e, dtype=float)
        if e.ndim != 2:
            raise ValueError("error bound must be a states x actions matrix")
        if np.any(e < 0) or np.any(e > 2.0) or not np.all(np.isfinite(e)):
            raise ValueError("error bound entries must lie in [0, 2]")
        e.setflags(write=False)
        object.__setattr__(self, "e", e)

    @classmethod
    def zeros(cls, n_states: int, n_actions: int) -> "ErrorBound":
        return cls(np.zeros((n_states, n_actions)))

    def scaled(self, factor: float) -> "ErrorBound":
        return ErrorBound(np.minimum(2.0, self.e * factor))

    def covers(self, mismeasure: "ErrorBound", tol: float = 0.0) -> bool:
        """True when this bound dominates ``mismeasure`` entrywise."""
        return bool(np.all(mismeasure.e <= self.e + tol))


def simulate_trajectories(
    true_mdp: TabularMdp,
    baseline: PolicyTable,
    n_steps: int,
    episode_length: int,
    seed: int,
) -> TrajectoryBatch:
    """Roll out ``baseline`` in ``true_mdp`` for ``n_steps`` transitions.

    Episodes restart from the initial distribution every ``episode_length``
    steps.  Output is a pure function of the arguments.
    """
    if n_steps < 1 or episode_length < 1:
        raise ValueError("n_steps and episode_length must be positive")
    if baseline.state_space != PLAIN:
        raise ValueError("baseline must be a plain-state policy")
    probs = policy_matrix(true_mdp, baseline)
    n, m = true_mdp.n_states, true_mdp.n_actions
    rng = np.random.default_rng(seed)
    # Python lists with bisect beat numpy calls on rows this short.
    action_cdf = np.cumsum(probs, axis=1).tolist()
    next_cdf = np.cumsum(true_mdp.transitions, axis=2).tolist()
    p0_cdf = np.cumsum(true_mdp.p0).tolist()
    u_action = rng.random(n_steps).tolist()
    u_next = rng.random(n_steps).tolist()
    u_start = rng.random(n_steps // episode_length + 1).tolist()
    last_state, last_action = n - 1, m - 1

    triples = np.empty((n_steps, 3), dtype=np.int64)
    # Clamping guards against a cumulative sum ending at 1 - 1e-16.
    x = min(bisect_right(p0_cdf, u_start[0]), last_state)
    for k in range(n_steps):
        if k and k % episode_length == 0:
            x = min(bisect_right(p0_cdf, u_start[k // episode_length]), last_state)
        a = min(bisect_right(action_cdf[x], u_action[k]), last_action)
        y = min(bisect_right(next_cdf[x][a], u_next[k]), last_state)
        triples[k] = (x, a, y)
        x = y
    return TrajectoryBatch.from_triples(triples, n, m)


def estimate_model(batch: TrajectoryBatch, template: TabularMdp, smoothing: float | None = None) -> TabularMdp:
    """Empirical transition frequencies with additive smoothing.

    Rewards, discount, reward bound and initial state come from ``template``.
    ``smoothing`` defaults to ``1 / n_states``; with zero smoothing, unvisited
    rows fall back to uniform.
    """
    n, m = template.n_states, template.n_actions
    if batch.counts.shape != (n, m):
        raise ValueError(f"batch covers {batch.counts.shape}, template is {(n, m)}")
    if smoothing is None:
        smoothing = 1.0 / n
    if smoothing < 0:
        raise ValueError("smoothing must be non-negative")
    counts = batch.next_state_counts().astype(float) + smoothing
    totals = counts.sum(axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        p_hat = np.where(totals > 0, counts / totals, 1.0 / n)
    # Renormalize so every row sums to one at machine precision.
    p_hat = p_hat / p_hat.sum(axis=2, keepdims=True)
    return template.replace(transitions=p_hat)


def _log_two_pow_minus_two(n: int) -> float:
    """``ln(2**n - 2)`` without overflow for large ``n``."""
    return n * math.log(2.0) + math.log1p(-(2.0 ** (1 - n)))


def l1_error_bound(batch: TrajectoryBatch, n_states: int, confidence_delta: float) -> ErrorBound:
    """Concentration bound on the L1 error of the empirical transition rows.

    ``e(x,a) = min(2, sqrt(2 (ln(2^n - 2) - ln delta') / N(x,a)))`` with
    ``delta' = confidence_delta / (n_states * n_actions)``, holding for all
    pairs simultaneously with probability at least ``1 - confidence_delta``.
    Unvisited pairs get the vacuous bound 2.
    """
    if not 0.0 < confidence_delta < 1.0:
        raise ValueError("confidence_delta must lie in (0, 1)")
    counts = batch.counts.astype(float)
    if n_states == 1:
        # A single next state leaves no room for error.
        return ErrorBound(np.zeros_like(counts))
    delta_pair = confidence_delta / counts.size
    numerator = 2.0 * (_log_two_pow_minus_two(n_states) - math.log(delta_pair))
    with np.errstate(divide="ignore"):
        e = np.where(counts > 0, np.sqrt(numerator / np.maximum(counts, 1.0)), 2.0)
    return ErrorBound(np.minimum(2.0, e))


def true_mismeasure(true_mdp: TabularMdp, sim_mdp: TabularMdp) -> ErrorBound:
    """Exact L1 distance between true and simulated transition rows."""
    if true_mdp.transitions.shape != sim_mdp.transitions.shape:
        raise ValueError("models have different dimensions")
    dist = np.abs(true_mdp.transitions - sim_mdp.transitions).sum(axis=2)
    return ErrorBound(np.minimum(dist, 2.0))
