"""Base learners that differ only in learning rate, plus scripted test bases."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core import ConfigurationError, ContractViolation

# default grid of ten learning rates, largest first
PAPER_LR_GRID = [1e-2, 5e-3, 1e-3, 5e-4, 1e-4, 5e-5, 1e-5, 5e-6, 1e-6, 5e-7]


class Transition(NamedTuple):
    state: int
    action: int
    reward: float
    next_state: int
    terminal: bool


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max())
    return z / z.sum()


class QLearningAgent:
    """Tabular Q-learning with a decaying epsilon-greedy behaviour policy."""

    def __init__(self, n_states: int, n_actions: int, alpha: float, gamma: float = 0.95,
                 epsilon: float = 1.0, epsilon_decay: float = 0.995, epsilon_min: float = 0.05,
                 q_init: float = 0.0):
        if alpha < 0.0:
            raise ConfigurationError("learning rate must be >= 0", "bases.learning_rates")
        if not 0.0 <= gamma <= 1.0:
            raise ConfigurationError("must lie in [0, 1]", "bases.gamma")
        self.alpha = alpha
        self.gamma = gamma
        self.epsilon = epsilon
        self.epsilon_decay = epsilon_decay
        self.epsilon_min = epsilon_min
        self.q = np.full((n_states, n_actions), float(q_init))

    def act(self, state: int, rng: np.random.Generator) -> int:
        row = self.q[state]
        # one uniform per step keeps the stream position independent of Q
        if rng.random() < self.epsilon:
            return int(rng.integers(len(row)))
        return int(np.argmax(row))

    def q_update(self, s: int, a: int, r: float, s_next: int, terminal: bool) -> None:
        bootstrap = 0.0 if terminal else self.gamma * self.q[s_next].max()
        self.q[s, a] += self.alpha * (r + bootstrap - self.q[s, a])

    def learn(self, trajectory: Sequence[Transition]) -> None:
        for tr in trajectory:
            self.q_update(tr.state, tr.action, tr.reward, tr.next_state, tr.terminal)
        self.epsilon = max(self.epsilon_min, self.epsilon * self.epsilon_decay)
        if not np.all(np.isfinite(self.q)):
            raise ContractViolation("Q table diverged to non-finite values")

    def value_bound(self, r_max: float = 1.0) -> float:
        """Soft magnitude guard for bounded rewards; infinite when gamma == 1."""
        if self.gamma >= 1.0:
            return math.inf
        return r_max / (1.0 - self.gamma)


class PolicyGradientAgent:
    """Tabular softmax policy trained by REINFORCE with a per-state mean-return baseline."""

    def __init__(self, n_states: int, n_actions: int, alpha: float, gamma: float = 0.99):
        if alpha < 0.0:
            raise ConfigurationError("learning rate must be >= 0", "bases.learning_rates")
        if not 0.0 <= gamma <= 1.0:
            raise ConfigurationError("must lie in [0, 1]", "bases.gamma")
        self.alpha = alpha
        self.gamma = gamma
        self.logits = np.zeros((n_states, n_actions))
        self.baseline = np.zeros(n_states)
        self.visits = np.zeros(n_states, dtype=np.int64)

    def policy(self, state: int) -> np.ndarray:
        return softmax(self.logits[state])

    def act(self, state: int, rng: np.random.Generator) -> int:
        probs = self.policy(state)
        u = rng.random()
        return int(min(np.searchsorted(np.cumsum(probs), u, side="right"), len(probs) - 1))

    def returns_to_go(self, rewards: Sequence[float]) -> np.ndarray:
        out = np.zeros(len(rewards))
        acc = 0.0
        for t in range(len(rewards) - 1, -1, -1):
            acc = rewards[t] + self.gamma * acc
            out[t] = acc
        return out

    def advantages(self, trajectory: Sequence[Transition]) -> np.ndarray:
        returns = self.returns_to_go([tr.reward for tr in trajectory])
        return returns - self.baseline[[tr.state for tr in trajectory]]

    def gradient(self, trajectory: Sequence[Transition], advantages: np.ndarray) -> np.ndarray:
        """Gradient of sum_t A_t log pi(a_t | s_t) with respect to the logits."""
        grad = np.zeros_like(self.logits)
        for tr, adv in zip(trajectory, advantages):
            g = -self.policy(tr.state)
            g[tr.action] += 1.0
            grad[tr.state] += adv * g
        return grad

    def pg_update(self, trajectory: Sequence[Transition]) -> None:
        if len(trajectory) == 0:
            raise ContractViolation("policy-gradient update needs a non-empty trajectory")
        returns = self.returns_to_go([tr.reward for tr in trajectory])
        adv = self.advantages(trajectory)
        self.logits += self.alpha * self.gradient(trajectory, adv)
        for tr, g in zip(trajectory, returns):
            self.visits[tr.state] += 1
            self.baseline[tr.state] += (g - self.baseline[tr.state]) / self.visits[tr.state]

    learn = pg_update


@dataclass(frozen=True)
class Phase:
    start: int
    mean: float
    noise: float = 0.0


class ScriptedBase:
    """Synthetic base whose normalized return follows a fixed phase schedule.

    ``schedule`` is a list of ``(start_episode, mean, noise_half_width)``;
    the first phase must start at episode 0.
    """

    alpha = None

    def __init__(self, schedule: Sequence[Sequence[float]]):
        phases = [Phase(int(p[0]), float(p[1]), float(p[2]) if len(p) > 2 else 0.0) for p in schedule]
        if not phases:
            raise ConfigurationError("schedule needs at least one phase", "bases.schedules")
        if phases[0].start != 0:
            raise ConfigurationError("first phase must start at episode 0", "bases.schedules")
        for a, b in zip(phases, phases[1:]):
            if b.start <= a.start:
                raise ConfigurationError("phase starts must increase", "bases.schedules")
        for p in phases:
            if not 0.0 <= p.mean <= 1.0 or p.noise < 0.0:
                raise ConfigurationError("means must lie in [0, 1], noise >= 0", "bases.schedules")
        self.phases = phases

    def phase(self, episode: int) -> Phase:
        if episode < 0:
            raise ContractViolation("episode index must be >= 0")
        current = self.phases[0]
        for p in self.phases:
            if p.start <= episode:
                current = p
        return current

    def scripted_return(self, episode: int, rng: np.random.Generator) -> float:
        p = self.phase(episode)
        value = p.mean
        if p.noise > 0.0:
            value += rng.uniform(-p.noise, p.noise)
        return min(1.0, max(0.0, value))
