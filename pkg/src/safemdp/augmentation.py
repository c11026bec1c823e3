"""Two-track augmented MDP encoding the Lagrangian under a single model.

Augmented states are pairs ``(x, i)`` with ``i`` in ``{0, 1}``, laid out as
``x + i * n_states``.  Track 0 evolves under the simulated model with reward
``2 r``; track 1 evolves under the true model (or the simulated one for the
surrogate) with reward ``2 lambda r``, minus an error penalty in penalized
mode.  Half the initial mass starts on each track, so the augmented return is
``E_sim[return | track-0 policy] + lambda * E_track1[return | track-1 policy]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from .estimation import ErrorBound
from .mdp_core import AUGMENTED, PolicyTable, TabularMdp, policy_return, policy_values

PLAIN_REWARD = "plain"
PENALIZED_REWARD = "penalized"
TRUE_TRACK = "true"
SIM_TRACK = "sim"


class MissingTrueModel(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AugmentedMdp:
    base_sim: TabularMdp
    lam: float
    error: Optional[ErrorBound] = None
    base_true: Optional[TabularMdp] = None
    reward_mode: str = PLAIN_REWARD
    track1: Optional[str] = None

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        object.__setattr__(self, "lam", float(self.lam))
        if self.reward_mode not in (PLAIN_REWARD, PENALIZED_REWARD):
            raise ValueError(f"unknown reward mode {self.reward_mode!r}")
        if self.reward_mode == PENALIZED_REWARD and self.error is None:
            raise ValueError("penalized rewards need an error bound")
        shape = self.base_sim.rewards.shape
        if self.error is not None and self.error.e.shape != shape:
            raise ValueError(f"error bound shape {self.error.e.shape} != model shape {shape}")
        if self.base_true is not None and self.base_true.transitions.shape != self.base_sim.transitions.shape:
            raise ValueError("true and simulated models differ in dimensions")
        track1 = self.track1 or (TRUE_TRACK if self.base_true is not None else SIM_TRACK)
        if track1 not in (TRUE_TRACK, SIM_TRACK):
            raise ValueError(f"unknown track model {track1!r}")
        if track1 == TRUE_TRACK and self.base_true is None:
            raise MissingTrueModel("the true-model track needs base_true")
        object.__setattr__(self, "track1", track1)

    @classmethod
    def lagrangian(cls, sim: TabularMdp, true: TabularMdp, lam: float) -> "AugmentedMdp":
        """``P^aug`` with ``r_lambda``: the exact Lagrangian."""
        return cls(sim, lam, base_true=true, reward_mode=PLAIN_REWARD, track1=TRUE_TRACK)

    @classmethod
    def penalized(cls, sim: TabularMdp, error: ErrorBound, lam: float) -> "AugmentedMdp":
        """``P_hat^aug`` with the penalized reward: the computable surrogate."""
        return cls(sim, lam, error=error, reward_mode=PENALIZED_REWARD, track1=SIM_TRACK)

    def with_lambda(self, lam: float) -> "AugmentedMdp":
        return AugmentedMdp(self.base_sim, lam, self.error, self.base_true, self.reward_mode, self.track1)

    @property
    def n_base(self) -> int:
        return self.base_sim.n_states

    @property
    def n_states(self) -> int:
        return 2 * self.base_sim.n_states

    @property
    def n_actions(self) -> int:
        return self.base_sim.n_actions

    @property
    def gamma(self) -> float:
        return self.base_sim.gamma

    @property
    def r_max(self) -> float:
        return self.base_sim.r_max

    @property
    def penalty_coefficient(self) -> float:
        """``2 gamma lambda r_max / (1 - gamma)``, the per-unit-error penalty on track 1."""
        return 2.0 * self.gamma * self.lam * self.r_max / (1.0 - self.gamma)

    def index(self, x: int, i: int) -> int:
        return x + i * self.n_base

    @cached_property
    def track1_model(self) -> TabularMdp:
        return self.base_true if self.track1 == TRUE_TRACK else self.base_sim

    @cached_property
    def rewards(self) -> np.ndarray:
        r = self.base_sim.rewards
        track1 = 2.0 * self.lam * r
        if self.reward_mode == PENALIZED_REWARD:
            track1 = track1 - self.penalty_coefficient * self.error.e
        out = np.vstack([2.0 * r, track1])
        out.setflags(write=False)
        return out

    @cached_property
    def transitions(self) -> np.ndarray:
        n, m = self.n_base, self.n_actions
        out = np.zeros((2 * n, m, 2 * n))
        out[:n, :, :n] = self.base_sim.transitions
        out[n:, :, n:] = self.track1_model.transitions
        out.setflags(write=False)
        return out

    @cached_property
    def p0(self) -> np.ndarray:
        p0 = self.base_sim.p0
        out = 0.5 * np.concatenate([p0, p0])
        out.setflags(write=False)
        return out


def reward_lambda(aug: AugmentedMdp, x: int, i: int, a: int) -> float:
    """``r_lambda(x, i, a)``: ``2 r`` on track 0, ``2 lambda r`` on track 1."""
    r = aug.base_sim.rewards[x, a]
    return float(2.0 * r if i == 0 else 2.0 * aug.lam * r)


def reward_hat_lambda(aug: AugmentedMdp, x: int, i: int, a: int) -> float:
    """Penalized reward: track 1 loses ``2 gamma lambda r_max / (1-gamma) * e(x, a)``."""
    if aug.error is None:
        raise ValueError("penalized reward needs an error bound")
    base = reward_lambda(aug, x, i, a)
    if i == 0:
        return base
    return float(base - aug.penalty_coefficient * aug.error.e[x, a])


def transition_aug(aug: AugmentedMdp, x: int, i: int, a: int) -> np.ndarray:
    """Next-state distribution over augmented states; no mass crosses tracks."""
    return np.array(aug.transitions[aug.index(x, i), a])


def augmented_return(aug: AugmentedMdp, policy: PolicyTable) -> float:
    """Expected discounted augmented reward from ``P_0^aug``."""
    if policy.state_space != AUGMENTED:
        raise ValueError("augmented_return expects an augmented policy")
    return float(aug.p0 @ policy_values(aug, policy))


def lagrangian_identity_check(aug: AugmentedMdp, policy: PolicyTable) -> tuple[float, float]:
    """Augmented return versus ``E_sim[return] + lambda * E_true[return]``.

    The right side is computed on the plain models using the track-0 and
    track-1 restrictions of ``policy``; the two must agree.
    """
    if aug.base_true is None:
        raise MissingTrueModel("lagrangian identity needs the true model")
    lagr = AugmentedMdp.lagrangian(aug.base_sim, aug.base_true, aug.lam)
    direct = policy_return(aug.base_sim, policy.track(0)) + aug.lam * policy_return(aug.base_true, policy.track(1))
    return augmented_return(lagr, policy), float(direct)


def penalized_stage_reward(sim: TabularMdp, error: ErrorBound) -> np.ndarray:
    """``r(x,a) - gamma r_max / (1-gamma) * e(x,a)`` on the plain state space."""
    coef = sim.gamma * sim.r_max / (1.0 - sim.gamma)
    return sim.rewards - coef * error.e


def penalized_return(sim: TabularMdp, error: ErrorBound, policy: PolicyTable) -> float:
    """Simulated return of a plain policy under the penalized stage reward.

    With a valid error bound this lower-bounds the policy's true return.
    """
    return policy_return(sim, policy, penalized_stage_reward(sim, error))
