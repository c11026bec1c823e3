"""Tabular MDPs, stationary policies, exact evaluation and occupation measures.

All evaluation here is exact: a policy's value is the solution of the linear
system ``(I - gamma P_mu) V = r_mu`` and its discounted visiting distribution
solves the transposed system.  State spaces are small by assumption.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

# Module-wide tolerances.
STOCHASTIC_TOL = 1e-12
RESIDUAL_TOL = 1e-10
VALUE_TOL = 1e-9

PLAIN = "plain"
AUGMENTED = "augmented"
DETERMINISTIC = "deterministic"
STOCHASTIC = "stochastic"


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite discounted MDP ``(X, A, r, P, gamma, P_0)``.

    ``transitions[x, a, y]`` is ``P(y | x, a)`` and ``rewards[x, a]`` the
    expected stage reward.  The initial distribution is a single atom at
    ``initial_state`` unless ``initial_distribution`` is given; returns are
    linear in it either way.
    """

    rewards: np.ndarray
    transitions: np.ndarray
    gamma: float
    r_max: float
    initial_state: int = 0
    initial_distribution: Optional[np.ndarray] = None

    def __post_init__(self):
        rewards = _frozen(self.rewards)
        transitions = _frozen(self.transitions)
        if rewards.ndim != 2:
            raise ValueError(f"rewards must be 2-D, got shape {rewards.shape}")
        n, m = rewards.shape
        if transitions.shape != (n, m, n):
            raise ValueError(
                f"transitions shape {transitions.shape} does not match rewards {rewards.shape}"
            )
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "transitions", transitions)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "r_max", float(self.r_max))
        object.__setattr__(self, "initial_state", int(self.initial_state))
        if self.initial_distribution is not None:
            p0 = _frozen(self.initial_distribution)
            if p0.shape != (n,):
                raise ValueError(f"initial_distribution must have length {n}")
            object.__setattr__(self, "initial_distribution", p0)

    @property
    def n_states(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[1]

    @property
    def p0(self) -> np.ndarray:
        """Initial distribution as a vector."""
        if self.initial_distribution is not None:
            return self.initial_distribution
        p0 = np.zeros(self.n_states)
        p0[self.initial_state] = 1.0
        return p0

    @property
    def value_bound(self) -> float:
        return self.r_max / (1.0 - self.gamma)

    def replace(self, **changes) -> "TabularMdp":
        fields = dict(
            rewards=self.rewards,
            transitions=self.transitions,
            gamma=self.gamma,
            r_max=self.r_max,
            initial_state=self.initial_state,
            initial_distribution=self.initial_distribution,
        )
        fields.update(changes)
        return TabularMdp(**fields)


@dataclass(frozen=True, eq=False)
class PolicyTable:
    """Stationary Markov policy over plain states ``x`` or augmented ``(x, i)``.

    Deterministic tables hold one action index per state; stochastic tables
    hold a row ``mu(.|x)`` per state.  Augmented states use the layout
    ``(x, i) -> x + i * n_states``.
    """

    kind: str
    table: np.ndarray
    state_space: str = PLAIN

    def __post_init__(self):
        if self.kind not in (DETERMINISTIC, STOCHASTIC):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.state_space not in (PLAIN, AUGMENTED):
            raise ValueError(f"unknown state space {self.state_space!r}")
        if self.kind == DETERMINISTIC:
            table = np.asarray(self.table)
            if table.ndim != 1 or (table.size and not np.all(table == np.round(table))):
                raise ValueError("deterministic policy table must be a vector of action indices")
            table = _frozen(table, dtype=np.int64)
            if table.size and table.min() < 0:
                raise ValueError("negative action index in deterministic policy")
        else:
            table = _frozen(self.table)
            if table.ndim != 2:
                raise ValueError("stochastic policy table must be states x actions")
            if np.any(table < 0) or np.any(np.abs(table.sum(axis=1) - 1.0) > STOCHASTIC_TOL * table.shape[1] + 1e-15):
                raise ValueError("stochastic policy rows must be probability vectors")
        object.__setattr__(self, "table", table)

    @classmethod
    def deterministic(cls, actions, state_space: str = PLAIN) -> "PolicyTable":
        return cls(DETERMINISTIC, np.asarray(actions, dtype=np.int64), state_space)

    @classmethod
    def stochastic(cls, probs, state_space: str = PLAIN) -> "PolicyTable":
        return cls(STOCHASTIC, np.asarray(probs, dtype=float), state_space)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int, state_space: str = PLAIN) -> "PolicyTable":
        return cls.stochastic(np.full((n_states, n_actions), 1.0 / n_actions), state_space)

    @property
    def n_states(self) -> int:
        return self.table.shape[0]

    @property
    def is_deterministic(self) -> bool:
        return self.kind == DETERMINISTIC

    def probabilities(self, n_actions: int) -> np.ndarray:
        """Return the ``states x actions`` matrix ``mu(a|x)``."""
        if self.kind == STOCHASTIC:
            if self.table.shape[1] != n_actions:
                raise ValueError(
                    f"policy has {self.table.shape[1]} actions, model has {n_actions}"
                )
            return self.table
        if self.table.size and self.table.max() >= n_actions:
            raise ValueError(f"action index {self.table.max()} out of range for {n_actions} actions")
        probs = np.zeros((self.n_states, n_actions))
        probs[np.arange(self.n_states), self.table] = 1.0
        return probs

    def track(self, i: int) -> "PolicyTable":
        """Restriction of an augmented policy to track ``i`` as a plain policy."""
        if self.state_space != AUGMENTED:
            raise ValueError("track restriction requires an augmented policy")
        n = self.n_states // 2
        return PolicyTable(self.kind, self.table[i * n:(i + 1) * n], PLAIN)

    def lift(self) -> "PolicyTable":
        """Use a plain policy identically on both tracks of the augmented MDP."""
        if self.state_space != PLAIN:
            raise ValueError("only plain policies can be lifted")
        return PolicyTable(self.kind, np.concatenate([self.table, self.table]), AUGMENTED)

    @classmethod
    def from_tracks(cls, track0: "PolicyTable", track1: "PolicyTable") -> "PolicyTable":
        if track0.kind != track1.kind or track0.n_states != track1.n_states:
            raise ValueError("tracks must share kind and state count")
        return cls(track0.kind, np.concatenate([track0.table, track1.table]), AUGMENTED)

    def same_as(self, other: "PolicyTable") -> bool:
        return (
            self.kind == other.kind
            and self.state_space == other.state_space
            and self.table.shape == other.table.shape
            and bool(np.array_equal(self.table, other.table))
        )

    def to_json(self) -> dict:
        return {"kind": self.kind, "state_space": self.state_space, "table": self.table.tolist()}

    @classmethod
    def from_json(cls, payload: dict) -> "PolicyTable":
        return cls(payload["kind"], payload["table"], payload.get("state_space", PLAIN))


@dataclass(frozen=True, eq=False)
class ValueTable:
    values: np.ndarray
    state_space: str = PLAIN

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 1:
            raise ValueError("value table must be a vector")
        if not np.all(np.isfinite(values)):
            raise ValueError("value table has non-finite entries")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class OccupationMeasure:
    """Normalized discounted visiting distribution.

    ``state[x]`` is ``d(x) = (1-gamma) sum_k gamma^k P(x_k = x)`` and
    ``state_action[x, a] = d(x) mu(a|x)``.
    """

    state: np.ndarray
    state_action: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "state", _frozen(self.state))
        if self.state_action is not None:
            object.__setattr__(self, "state_action", _frozen(self.state_action))


def validate_mdp(mdp: TabularMdp) -> list[str]:
    """List every violated invariant of ``mdp``; empty when well formed."""
    problems = []
    n, m = mdp.n_states, mdp.n_actions
    if not 0.0 < mdp.gamma < 1.0:
        problems.append(f"gamma not in (0,1): {mdp.gamma}")
    if not mdp.r_max > 0:
        problems.append(f"r_max must be positive: {mdp.r_max}")
    if not 0 <= mdp.initial_state < n:
        problems.append(f"initial_state {mdp.initial_state} out of range [0,{n})")
    if mdp.initial_distribution is not None:
        p0 = mdp.initial_distribution
        if np.any(p0 < 0) or abs(p0.sum() - 1.0) > STOCHASTIC_TOL * n + 1e-15:
            problems.append(f"initial_distribution is not a probability vector (sum {p0.sum():.15g})")
    for x in range(n):
        for a in range(m):
            row = mdp.transitions[x, a]
            if np.any(row < 0):
                problems.append(f"row ({x},{a}) has negative entries")
            total = row.sum()
            if abs(total - 1.0) > STOCHASTIC_TOL * n + 1e-15:
                problems.append(f"row ({x},{a}) sums to {total:.15g}")
            if abs(mdp.rewards[x, a]) > mdp.r_max:
                problems.append(f"|reward ({x},{a})| = {abs(mdp.rewards[x, a]):.6g} exceeds r_max {mdp.r_max:.6g}")
    return problems


def policy_matrix(mdp, policy: PolicyTable) -> np.ndarray:
    """``mu(a|x)`` as a matrix checked against the model's dimensions.

    ``mdp`` may be anything exposing ``rewards``/``transitions``/``gamma``
    (plain or augmented models).
    """
    n, m = mdp.rewards.shape
    if policy.n_states != n:
        raise ValueError(f"policy covers {policy.n_states} states, model has {n}")
    return policy.probabilities(m)


def induced_chain(mdp, policy: PolicyTable, stage_reward=None) -> tuple[np.ndarray, np.ndarray]:
    """State-to-state matrix ``P_mu`` and reward vector ``r_mu`` under ``policy``."""
    probs = policy_matrix(mdp, policy)
    rewards = mdp.rewards if stage_reward is None else np.asarray(stage_reward, dtype=float)
    if rewards.shape != mdp.rewards.shape:
        raise ValueError(f"stage reward shape {rewards.shape} != {mdp.rewards.shape}")
    p_mu = np.einsum("xa,xay->xy", probs, mdp.transitions)
    r_mu = np.einsum("xa,xa->x", probs, rewards)
    return p_mu, r_mu


def policy_values(mdp, policy: PolicyTable, stage_reward=None) -> np.ndarray:
    """Exact ``V^mu`` by a direct solve of ``(I - gamma P_mu) V = r_mu``.

    ``stage_reward`` replaces ``mdp.rewards`` (e.g. to accumulate an error
    bound along trajectories).
    """
    p_mu, r_mu = induced_chain(mdp, policy, stage_reward)
    n = p_mu.shape[0]
    return np.linalg.solve(np.eye(n) - mdp.gamma * p_mu, r_mu)


def policy_return(mdp: TabularMdp, policy: PolicyTable, stage_reward=None) -> float:
    """Expected discounted return from the initial distribution."""
    if policy.state_space != PLAIN:
        raise ValueError("policy_return expects a plain-state policy")
    return float(mdp.p0 @ policy_values(mdp, policy, stage_reward))


def occupation_measure(mdp: TabularMdp, policy: PolicyTable) -> OccupationMeasure:
    """Solve ``(I - gamma P_mu)^T d = (1 - gamma) P_0`` for the visiting distribution."""
    p_mu, _ = induced_chain(mdp, policy)
    n = p_mu.shape[0]
    d = np.linalg.solve((np.eye(n) - mdp.gamma * p_mu).T, (1.0 - mdp.gamma) * mdp.p0)
    # Round-off can leave -1e-17 on unreachable states.
    d = np.where(np.abs(d) < 1e-15, 0.0, d)
    return OccupationMeasure(d, d[:, None] * policy_matrix(mdp, policy))


def baseline_threshold(true_mdp: TabularMdp, baseline: PolicyTable) -> float:
    """Safety threshold ``M_B``: the baseline's return in the true model."""
    return policy_return(true_mdp, baseline)


def optimal_values(mdp, tol: float = 1e-12, max_iters: int = 100_000) -> tuple[np.ndarray, np.ndarray]:
    """Optimal values and a greedy deterministic policy by policy iteration."""
    n, m = mdp.rewards.shape
    actions = np.zeros(n, dtype=np.int64)
    for _ in range(max_iters):
        v = policy_values(mdp, PolicyTable.deterministic(actions))
        q = mdp.rewards + mdp.gamma * mdp.transitions @ v
        best = q.max(axis=1)
        keep = q[np.arange(n), actions] >= best - tol
        new = np.where(keep, actions, q.argmax(axis=1))
        if np.array_equal(new, actions):
            return v, actions
        actions = new
    raise RuntimeError("policy iteration did not terminate")
