"""Model-selection interface shared by every meta-learner.

A meta-learner owns one :class:`MetaState` over ``m`` bases and exposes two
calls per episode: :meth:`MetaLearner.sample` picks the base that plays the
next episode, :meth:`MetaLearner.update` consumes that episode's rewards.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

D_MIN = 1.0


class ConfigurationError(ValueError):
    """Invalid configuration; ``key`` names the offending setting when known."""

    def __init__(self, message: str, key: str | None = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class ContractViolation(RuntimeError):
    pass


class NumericalError(RuntimeError):
    def __init__(self, message: str, snapshot: dict | None = None):
        self.snapshot = snapshot or {}
        super().__init__(message)


@dataclass
class BaseStats:
    pulls: int = 0
    cum_reward: float = 0.0
    regret_coeff: float = D_MIN
    # strategy-specific: balancing potential, confidence bound or probability
    potential: float = 0.0

    @property
    def mean(self) -> float:
        return self.cum_reward / self.pulls if self.pulls else 0.0

    def to_dict(self) -> dict:
        return {
            "pulls": self.pulls,
            "cum_reward": self.cum_reward,
            "regret_coeff": self.regret_coeff,
            "potential": self.potential,
        }


@dataclass
class MetaState:
    stats: list[BaseStats]
    active: list[int] = field(default_factory=list)
    step: int = 0

    @classmethod
    def fresh(cls, m: int, regret_coeff: float = D_MIN) -> MetaState:
        if m < 1:
            raise ConfigurationError("need at least one base", "m")
        return cls([BaseStats(regret_coeff=regret_coeff) for _ in range(m)], list(range(m)))

    @property
    def m(self) -> int:
        return len(self.stats)

    @property
    def pulls(self) -> list[int]:
        return [s.pulls for s in self.stats]

    @property
    def potentials(self) -> list[float]:
        return [s.potential for s in self.stats]


def normalize_return(rewards: Sequence[float], bounds: tuple[float, float]) -> float:
    """Map an episode's reward sum into [0, 1] using declared return bounds."""
    lo, hi = bounds
    if not hi > lo:
        raise ConfigurationError(f"return bounds need hi > lo, got ({lo}, {hi})", "return_bounds")
    value = (math.fsum(rewards) - lo) / (hi - lo)
    return min(1.0, max(0.0, value))


def argmin_index(values: Sequence[float], candidates: Sequence[int]) -> int:
    # strict comparison keeps the lowest index on ties
    best = candidates[0]
    for j in candidates[1:]:
        if values[j] < values[best]:
            best = j
    return best


def argmax_index(values: Sequence[float], candidates: Sequence[int]) -> int:
    best = candidates[0]
    for j in candidates[1:]:
        if values[j] > values[best]:
            best = j
    return best


def draw_index(probs: Sequence[float], rng: np.random.Generator) -> int:
    """Inverse-CDF draw; consumes exactly one uniform from ``rng``."""
    u = rng.random()
    acc = 0.0
    last = 0
    for j, p in enumerate(probs):
        if p <= 0.0:
            continue
        last = j
        acc += p
        if u < acc:
            return j
    return last


class MetaLearner:
    """Base class for strategies; subclasses implement ``_select`` and ``_update``."""

    name = "base"

    def __init__(self, m: int, config=None, rng: np.random.Generator | None = None,
                 bounds: tuple[float, float] = (0.0, 1.0)):
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.bounds = bounds
        self.state = MetaState.fresh(m)

    @property
    def m(self) -> int:
        return self.state.m

    def sample(self) -> int:
        if not self.state.active:
            raise ConfigurationError("all bases eliminated; nothing left to sample", "active")
        i = self._select()
        if i not in self.state.active:
            raise ContractViolation(f"{self.name} selected inactive base {i}")
        return i

    def update(self, i: int, episode_rewards: Sequence[float]) -> float:
        """Record one episode for base ``i``; returns the normalized return."""
        if i not in self.state.active:
            raise ContractViolation(f"update for base {i} outside active set {self.state.active}")
        if len(episode_rewards) == 0:
            raise ContractViolation("episode_rewards must be non-empty")
        r = normalize_return(episode_rewards, self.bounds)
        st = self.state.stats[i]
        st.pulls += 1
        st.cum_reward += r
        self.state.step += 1
        self._update(i, r)
        return r

    def _select(self) -> int:
        raise NotImplementedError

    def _update(self, i: int, r: float) -> None:
        raise NotImplementedError

    def snapshot(self) -> dict:
        return {
            "strategy": self.name,
            "step": self.state.step,
            "active": list(self.state.active),
            "stats": [s.to_dict() for s in self.state.stats],
        }
