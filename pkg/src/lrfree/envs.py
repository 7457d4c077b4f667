"""Small episodic MDPs with declared return bounds."""
from __future__ import annotations

import inspect

import numpy as np

from .core import ConfigurationError, ContractViolation


class EpisodicEnv:
    n_states: int
    n_actions: int
    horizon: int

    @property
    def return_bounds(self) -> tuple[float, float]:
        raise NotImplementedError

    def reset(self, rng: np.random.Generator) -> int:
        raise NotImplementedError

    def step(self, state: int, action: int, rng: np.random.Generator) -> tuple[int, float, bool]:
        raise NotImplementedError

    def _check(self, state: int, action: int) -> None:
        if not 0 <= action < self.n_actions:
            raise ContractViolation(f"invalid action {action} (n_actions={self.n_actions})")
        if not 0 <= state < self.n_states:
            raise ContractViolation(f"invalid state {state} (n_states={self.n_states})")


class ChainEnv(EpisodicEnv):
    """Linear chain: LEFT pays a small reward, RIGHT at the far end pays 1.

    Action 0 (left) pays 0.1 and moves one state left (staying at 0).
    Action 1 (right) advances one state, or stays put with probability
    ``p_slip``; it pays 1.0 only when taken in the rightmost state.
    No terminal states; episodes end at the horizon.
    """

    LEFT, RIGHT = 0, 1

    def __init__(self, length: int = 5, horizon: int = 20, p_slip: float = 0.0,
                 left_reward: float = 0.1):
        if length < 2:
            raise ConfigurationError("chain needs at least 2 states", "env.length")
        if horizon < 1:
            raise ConfigurationError("must be >= 1", "env.horizon")
        if not 0.0 <= p_slip < 1.0:
            raise ConfigurationError("must lie in [0, 1)", "env.p_slip")
        if not 0.0 <= left_reward <= 1.0:
            raise ConfigurationError("must lie in [0, 1]", "env.left_reward")
        self.length = length
        self.horizon = horizon
        self.p_slip = p_slip
        self.left_reward = left_reward
        self.n_states = length
        self.n_actions = 2

    @property
    def return_bounds(self):
        return 0.0, float(self.horizon)

    def reset(self, rng):
        return 0

    def step(self, state, action, rng):
        self._check(state, action)
        if action == self.LEFT:
            return max(state - 1, 0), self.left_reward, False
        reward = 1.0 if state == self.length - 1 else 0.0
        # slip draw only when it can matter, so p_slip=0 consumes no randomness
        if self.p_slip > 0.0 and rng.random() < self.p_slip:
            return state, reward, False
        return min(state + 1, self.length - 1), reward, False


class GridworldEnv(EpisodicEnv):
    """Grid with a single rewarding terminal goal cell.

    Actions: 0 up, 1 right, 2 down, 3 left. With probability ``slip`` the
    chosen action is replaced by a uniformly random one.
    """

    MOVES = ((0, -1), (1, 0), (0, 1), (-1, 0))

    def __init__(self, width: int = 4, height: int = 4, start=(0, 0), goal=None,
                 horizon: int = 30, slip: float = 0.0):
        if width < 1 or height < 1 or width * height < 2:
            raise ConfigurationError("grid needs at least 2 cells", "env.width")
        goal = tuple(goal) if goal is not None else (width - 1, height - 1)
        start = tuple(start)
        for key, cell in (("env.start", start), ("env.goal", goal)):
            if not (0 <= cell[0] < width and 0 <= cell[1] < height):
                raise ConfigurationError(f"cell {cell} outside {width}x{height} grid", key)
        if start == goal:
            raise ConfigurationError("start equals goal", "env.goal")
        if horizon < 1:
            raise ConfigurationError("must be >= 1", "env.horizon")
        if not 0.0 <= slip < 1.0:
            raise ConfigurationError("must lie in [0, 1)", "env.slip")
        self.width, self.height = width, height
        self.start, self.goal = start, goal
        self.horizon = horizon
        self.slip = slip
        self.n_states = width * height
        self.n_actions = 4

    @property
    def return_bounds(self):
        # one terminal reward of 1.0 is the most any episode can collect
        return 0.0, 1.0

    def cell(self, state: int) -> tuple[int, int]:
        return state % self.width, state // self.width

    def index(self, x: int, y: int) -> int:
        return y * self.width + x

    def reset(self, rng):
        return self.index(*self.start)

    def step(self, state, action, rng):
        self._check(state, action)
        if self.slip > 0.0 and rng.random() < self.slip:
            action = int(rng.integers(self.n_actions))
        x, y = self.cell(state)
        dx, dy = self.MOVES[action]
        x = min(max(x + dx, 0), self.width - 1)
        y = min(max(y + dy, 0), self.height - 1)
        if (x, y) == self.goal:
            return self.index(x, y), 1.0, True
        return self.index(x, y), 0.0, False


ENVS = {"chain": ChainEnv, "gridworld": GridworldEnv}


def make_env(spec: dict) -> EpisodicEnv:
    spec = dict(spec)
    name = spec.pop("name", "chain")
    if name not in ENVS:
        raise ConfigurationError(f"unknown env {name!r}; choose from {sorted(ENVS)}", "env.name")
    cls = ENVS[name]
    allowed = set(inspect.signature(cls).parameters)
    extra = sorted(set(spec) - allowed)
    if extra:
        raise ConfigurationError(f"unknown key for {name}", f"env.{extra[0]}")
    return cls(**spec)
