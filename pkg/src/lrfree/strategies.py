"""Meta-learner strategies: regret balancing (D3RB, ED2RB, classic), EXP3, Corral, UCB.

Every class here subclasses :class:`lrfree.core.MetaLearner`; ``make_strategy``
builds one by name from a :class:`StrategyConfig`.
"""
from __future__ import annotations

import logging
import math
import sys
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .core import (
    D_MIN,
    ConfigurationError,
    ContractViolation,
    MetaLearner,
    NumericalError,
    argmax_index,
    argmin_index,
    draw_index,
)

log = logging.getLogger(__name__)

TINY = sys.float_info.min


@dataclass
class StrategyConfig:
    delta: float = 0.05
    conf_scale: float = 1.0
    d_min: float = D_MIN
    # expected number of episodes; feeds the default EXP3/Corral step sizes
    horizon: int = 1000
    exp3_eta: float | None = None
    exp3_mode: str = "sample"
    corral_eta: float | None = None
    corral_gamma: float | None = None
    corral_eta_growth: float = 1.12
    putative_coeffs: list[float] | None = None
    epsilon: float = 0.1

    def validate(self, m: int | None = None, name: str | None = None) -> None:
        if not 0.0 < self.delta < 1.0:
            raise ConfigurationError("must lie in (0, 1)", "strategy.delta")
        if self.conf_scale < 0.0:
            raise ConfigurationError("must be >= 0", "strategy.conf_scale")
        if not self.d_min > 0.0:
            raise ConfigurationError("must be > 0", "strategy.d_min")
        if int(self.horizon) < 1:
            raise ConfigurationError("must be >= 1", "strategy.horizon")
        if self.exp3_eta is not None and not self.exp3_eta > 0.0:
            raise ConfigurationError("must be > 0", "strategy.exp3_eta")
        if self.exp3_mode not in ("sample", "argmax"):
            raise ConfigurationError("must be 'sample' or 'argmax'", "strategy.exp3_mode")
        if self.corral_eta is not None and not self.corral_eta > 0.0:
            raise ConfigurationError("must be > 0", "strategy.corral_eta")
        if self.corral_gamma is not None and not 0.0 < self.corral_gamma < 1.0:
            raise ConfigurationError("must lie in (0, 1)", "strategy.corral_gamma")
        if not self.corral_eta_growth >= 1.0:
            raise ConfigurationError("must be >= 1", "strategy.corral_eta_growth")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigurationError("must lie in [0, 1]", "strategy.epsilon")
        if self.putative_coeffs is not None:
            if any(not c > 0.0 for c in self.putative_coeffs):
                raise ConfigurationError("entries must be > 0", "strategy.putative_coeffs")
            if name == "classic" and m is not None and len(self.putative_coeffs) != m:
                raise ConfigurationError(
                    f"needs one entry per base ({m}), got {len(self.putative_coeffs)}",
                    "strategy.putative_coeffs")

    def to_dict(self) -> dict:
        return asdict(self)


def confidence_width(pulls: int, m: int, delta: float, c: float) -> float:
    """c * sqrt(ln(m ln(n) / delta) / n), with ln(n) floored at 1."""
    if pulls < 1:
        raise ContractViolation("confidence width needs at least one pull")
    loglog = math.log(max(pulls, math.e))
    return c * math.sqrt(math.log(m * loglog / delta) / pulls)


class _Balancing(MetaLearner):
    """Shared plumbing for the three regret-balancing strategies."""

    def __init__(self, m, config=None, rng=None, bounds=(0.0, 1.0)):
        config = config or StrategyConfig()
        super().__init__(m, config, rng, bounds)
        for s in self.state.stats:
            s.regret_coeff = config.d_min

    def width(self, pulls: int) -> float:
        return confidence_width(pulls, self.m, self.config.delta, self.config.conf_scale)

    def best_pessimistic(self, pool: Sequence[int]) -> float:
        stats = self.state.stats
        return max(stats[j].mean - self.width(stats[j].pulls) for j in pool if stats[j].pulls >= 1)

    def misspecified(self, k: int, d: float, rhs: float) -> bool:
        st = self.state.stats[k]
        n = st.pulls
        lhs = st.mean + d * math.sqrt(n) / n + self.width(n)
        # strict: a tie is not evidence of misspecification
        return lhs < rhs

    def _select(self) -> int:
        # unplayed bases sit at potential 0, so they go first
        return argmin_index(self.state.potentials, self.state.active)


class D3RB(_Balancing):
    """Doubling data-driven regret balancing."""

    name = "d3rb"

    def _update(self, i: int, r: float) -> None:
        st = self.state.stats[i]
        rhs = self.best_pessimistic(range(self.m))
        if self.misspecified(i, st.regret_coeff, rhs):
            st.regret_coeff *= 2.0
        st.potential = st.regret_coeff * math.sqrt(st.pulls)


class ED2RB(_Balancing):
    """Estimating data-driven regret balancing."""

    name = "ed2rb"

    def _update(self, i: int, r: float) -> None:
        st = self.state.stats[i]
        n = st.pulls
        rhs = self.best_pessimistic(range(self.m))
        # sqrt(n) multiplies the whole gap, confidence terms included; the
        # alternative reading keeps the two widths outside the product
        estimate = math.sqrt(n) * (rhs - self.width(n) - st.mean)
        st.regret_coeff = max(self.config.d_min, estimate)
        candidate = st.regret_coeff * math.sqrt(n)
        old = st.potential
        st.potential = min(max(candidate, old), 2.0 * old) if old > 0.0 else candidate


class ClassicBalancing(_Balancing):
    """Regret bound balancing with fixed putative coefficients and elimination."""

    name = "classic"

    def __init__(self, m, config=None, rng=None, bounds=(0.0, 1.0)):
        config = config or StrategyConfig()
        coeffs = config.putative_coeffs
        if coeffs is None:
            coeffs = [config.d_min] * m
        if len(coeffs) != m:
            raise ConfigurationError(f"needs {m} entries, got {len(coeffs)}", "strategy.putative_coeffs")
        super().__init__(m, config, rng, bounds)
        for s, d in zip(self.state.stats, coeffs):
            s.regret_coeff = float(d)
        self.warnings: list[dict] = []

    def _update(self, i: int, r: float) -> None:
        stats = self.state.stats
        active = self.state.active
        played = [k for k in active if stats[k].pulls >= 1]
        rhs = self.best_pessimistic(played)
        failed = [k for k in played if self.misspecified(k, stats[k].regret_coeff, rhs)]
        survivors = [k for k in active if k not in failed]
        if not survivors:
            keep = max(played, key=lambda k: (stats[k].mean - self.width(stats[k].pulls), -k))
            survivors = [keep]
            record = {"step": self.state.step, "kept": keep, "failed": failed}
            self.warnings.append(record)
            log.warning("classic balancing would eliminate every base; keeping %d", keep)
        self.state.active = survivors
        for k in survivors:
            st = stats[k]
            st.potential = st.regret_coeff * math.sqrt(st.pulls)


class EXP3(MetaLearner):
    """Exponential weights over bases with importance-weighted losses."""

    name = "exp3"

    def __init__(self, m, config=None, rng=None, bounds=(0.0, 1.0)):
        config = config or StrategyConfig()
        super().__init__(m, config, rng, bounds)
        if config.exp3_eta is not None:
            self.eta = config.exp3_eta
        else:
            self.eta = math.sqrt(math.log(m) / (m * config.horizon))
        self.scores = [0.0] * m
        self.probs = [1.0 / m] * m
        self._sync()

    def _sync(self) -> None:
        for s, p in zip(self.state.stats, self.probs):
            s.potential = p

    def _select(self) -> int:
        if self.config.exp3_mode == "argmax":
            return argmax_index(self.probs, self.state.active)
        return draw_index(self.probs, self.rng)

    def _update(self, i: int, r: float) -> None:
        p_i = self.probs[i]
        if not p_i > 0.0:
            raise ContractViolation(f"base {i} has zero probability")
        for j in range(self.m):
            loss = (1.0 - r) / p_i if j == i else 0.0
            self.scores[j] = self.scores[j] + 1.0 - loss
        top = max(self.scores)
        weights = [math.exp(self.eta * (s - top)) for s in self.scores]
        total = math.fsum(weights)
        # exp() underflows to 0.0 once a score trails by ~745/eta; keep the
        # entry at the smallest normal float so every base stays reachable
        self.probs = [max(w / total, TINY) for w in weights]
        self._sync()


def log_barrier_step(probs: Sequence[float], losses: Sequence[float], etas: Sequence[float],
                     tol: float = 1e-10, max_iter: int = 200) -> list[float]:
    """One log-barrier mirror-descent step; bisects for the normalizing multiplier."""

    def total(lam: float) -> float:
        acc = 0.0
        for p, l, e in zip(probs, losses, etas):
            den = 1.0 / p + e * (l - lam)
            if den <= 0.0:
                return math.inf
            acc += 1.0 / den
        return acc

    lo, hi = min(losses), max(losses)
    # multiplier must stay left of the first pole of the sum
    pole = min(l + 1.0 / (e * p) for p, l, e in zip(probs, losses, etas))
    hi = min(hi, pole)
    lam = lo
    f = total(lo)
    it = 0
    while abs(f - 1.0) > tol:
        if it == max_iter:
            raise NumericalError(
                "log-barrier bisection did not converge",
                {"probs": list(probs), "losses": list(losses), "etas": list(etas),
                 "lambda": lam, "residual": f - 1.0},
            )
        lam = 0.5 * (lo + hi)
        f = total(lam)
        if f > 1.0:
            hi = lam
        else:
            lo = lam
        it += 1
    return [1.0 / (1.0 / p + e * (l - lam)) for p, l, e in zip(probs, losses, etas)]


class Corral(MetaLearner):
    """Corral: log-barrier OMD with smoothing and per-base step-size growth."""

    name = "corral"

    def __init__(self, m, config=None, rng=None, bounds=(0.0, 1.0)):
        config = config or StrategyConfig()
        super().__init__(m, config, rng, bounds)
        horizon = config.horizon
        self.gamma = config.corral_gamma if config.corral_gamma is not None else 1.0 / horizon
        eta = config.corral_eta if config.corral_eta is not None else math.sqrt(m / horizon)
        self.growth = config.corral_eta_growth
        self.probs = [1.0 / m] * m
        self.etas = [eta] * m
        self.thresholds = [2.0 * m] * m
        self._sync()

    def _sync(self) -> None:
        for s, p in zip(self.state.stats, self.probs):
            s.potential = p

    def _select(self) -> int:
        return draw_index(self.probs, self.rng)

    def _update(self, i: int, r: float) -> None:
        m = self.m
        losses = [(1.0 - r) / self.probs[i] if j == i else 0.0 for j in range(m)]
        try:
            new = log_barrier_step(self.probs, losses, self.etas)
        except NumericalError as exc:
            exc.snapshot.update(self.snapshot())
            raise
        total = math.fsum(new)
        new = [q / total for q in new]
        self.probs = [(1.0 - self.gamma) * q + self.gamma / m for q in new]
        for j in range(m):
            if 1.0 / self.probs[j] > self.thresholds[j]:
                self.thresholds[j] *= 2.0
                self.etas[j] *= self.growth
        self._sync()

    def snapshot(self) -> dict:
        snap = super().snapshot()
        snap.update(probs=list(self.probs), etas=list(self.etas), thresholds=list(self.thresholds))
        return snap


class UCB(MetaLearner):
    name = "ucb"

    def _select(self) -> int:
        for j in self.state.active:
            if self.state.stats[j].pulls == 0:
                return j
        return argmax_index(self.state.potentials, self.state.active)

    def _update(self, i: int, r: float) -> None:
        st = self.state.stats[i]
        delta = (self.config or StrategyConfig()).delta
        st.potential = st.mean + math.sqrt(2.0 * math.log(1.0 / delta) / st.pulls)


class EpsilonGreedy(MetaLearner):
    """Fixed-epsilon greedy over bases; a linear-exploration control, not a model selector."""

    name = "eps_greedy"

    def _select(self) -> int:
        active = self.state.active
        for j in active:
            if self.state.stats[j].pulls == 0:
                return j
        eps = (self.config or StrategyConfig()).epsilon
        if self.rng.random() < eps:
            return active[int(self.rng.integers(len(active)))]
        return argmax_index(self.state.potentials, active)

    def _update(self, i: int, r: float) -> None:
        st = self.state.stats[i]
        st.potential = st.mean


STRATEGIES = {
    cls.name: cls for cls in (D3RB, ED2RB, ClassicBalancing, EXP3, Corral, UCB)
}
CONTROLS = {EpsilonGreedy.name: EpsilonGreedy}


def make_strategy(name: str, m: int, config: StrategyConfig | None = None,
                  rng: np.random.Generator | None = None,
                  bounds: tuple[float, float] = (0.0, 1.0)) -> MetaLearner:
    registry = {**STRATEGIES, **CONTROLS}
    if name not in registry:
        raise ConfigurationError(
            f"unknown strategy {name!r}; choose from {sorted(registry)}", "strategy.name")
    config = config or StrategyConfig()
    config.validate(m, name)
    return registry[name](m, config, rng, bounds)
