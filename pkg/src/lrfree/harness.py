"""Episode loop that interleaves meta-learner selection with base-agent training.

Also holds the experiment config, run records and their on-disk formats, and
the multi-seed aggregation used by the CLI.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .bases import PAPER_LR_GRID, PolicyGradientAgent, QLearningAgent, ScriptedBase, Transition
from .core import ConfigurationError, ContractViolation, NumericalError
from .envs import make_env
from .strategies import CONTROLS, STRATEGIES, StrategyConfig, make_strategy

BASE_KINDS = ("q_learning", "policy_gradient", "scripted")
AGENT_PARAMS = {
    "q_learning": ("gamma", "epsilon", "epsilon_decay", "epsilon_min", "q_init"),
    "policy_gradient": ("gamma",),
}

# independent random streams per run, keyed off the master seed
ENV_STREAM, META_STREAM, BASE_STREAM_OFFSET = 0, 1, 2


def stream(seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))


# ---------------------------------------------------------------------------
# configuration


@dataclass
class BasesConfig:
    kind: str = "q_learning"
    learning_rates: list[float] = field(default_factory=lambda: list(PAPER_LR_GRID))
    params: dict = field(default_factory=dict)
    schedules: list | None = None

    @property
    def m(self) -> int:
        if self.kind == "scripted":
            return len(self.schedules or [])
        return len(self.learning_rates)

    def alphas(self) -> list[float | None]:
        if self.kind == "scripted":
            rates = self.learning_rates or []
            return [rates[k] if k < len(rates) else None for k in range(self.m)]
        return list(self.learning_rates)


@dataclass
class ExperimentConfig:
    env: dict = field(default_factory=lambda: {"name": "chain", "length": 5, "horizon": 20})
    bases: BasesConfig = field(default_factory=BasesConfig)
    strategy: str = "d3rb"
    strategy_config: StrategyConfig = field(default_factory=StrategyConfig)
    episodes: int = 1000
    seeds: list[int] = field(default_factory=lambda: [0])
    out: str = "runs"
    window: int = 50

    @property
    def m(self) -> int:
        return self.bases.m

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a mapping with env/bases/strategy/run sections")
        unknown = set(data) - {"env", "bases", "strategy", "run"}
        if unknown:
            raise ConfigurationError("unknown section", sorted(unknown)[0])
        run = _section(data, "run")
        episodes = _get_int(run, "episodes", 1000, "run.episodes")
        seeds = run.get("seeds", [0])
        if isinstance(seeds, int):
            seeds = [seeds]
        if not isinstance(seeds, list) or not seeds or any(
                not isinstance(s, int) or isinstance(s, bool) or s < 0 for s in seeds):
            raise ConfigurationError("must be a non-empty list of non-negative integers", "run.seeds")
        window = _get_int(run, "window", 50, "run.window")
        _reject_unknown(run, {"episodes", "seeds", "out", "window"}, "run")

        env = dict(_section(data, "env"))
        bases = _parse_bases(_section(data, "bases"))

        strat = dict(_section(data, "strategy"))
        name = strat.pop("name", "d3rb")
        if name not in STRATEGIES and name not in CONTROLS:
            raise ConfigurationError(
                f"unknown strategy {name!r}; choose from {sorted({**STRATEGIES, **CONTROLS})}",
                "strategy.name")
        known = set(StrategyConfig.__dataclass_fields__)
        _reject_unknown(strat, known, "strategy")
        strat.setdefault("horizon", episodes)
        for key in ("delta", "conf_scale", "d_min", "exp3_eta", "corral_eta", "corral_gamma",
                    "corral_eta_growth", "epsilon"):
            if key in strat and strat[key] is not None:
                strat[key] = _as_float(strat[key], f"strategy.{key}")
        if "putative_coeffs" in strat and strat["putative_coeffs"] is not None:
            coeffs = strat["putative_coeffs"]
            if isinstance(coeffs, (int, float)):
                coeffs = [coeffs] * bases.m
            strat["putative_coeffs"] = [_as_float(c, "strategy.putative_coeffs") for c in coeffs]
        scfg = StrategyConfig(**strat)

        cfg = cls(env=env, bases=bases, strategy=name, strategy_config=scfg, episodes=episodes,
                  seeds=list(seeds), out=str(run.get("out", "runs")), window=window)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        m = self.m
        if m < 1:
            key = "bases.schedules" if self.bases.kind == "scripted" else "bases.learning_rates"
            raise ConfigurationError("need at least one base", key)
        if self.episodes < m:
            raise ConfigurationError(f"episodes ({self.episodes}) must be >= number of bases ({m})",
                                     "run.episodes")
        if self.window < 1:
            raise ConfigurationError("must be >= 1", "run.window")
        self.strategy_config.validate(m, self.strategy)
        if self.bases.kind != "scripted":
            make_env(self.env)

    def to_dict(self) -> dict:
        bases = {"kind": self.bases.kind, "learning_rates": list(self.bases.learning_rates or [])}
        bases.update(self.bases.params)
        if self.bases.schedules is not None:
            bases["schedules"] = copy.deepcopy(self.bases.schedules)
        return {
            "env": dict(self.env),
            "bases": bases,
            "strategy": {"name": self.strategy, **self.strategy_config.to_dict()},
            "run": {"episodes": self.episodes, "seeds": list(self.seeds), "out": self.out,
                    "window": self.window},
        }

    def with_strategy(self, name: str) -> ExperimentConfig:
        data = self.to_dict()
        data["strategy"]["name"] = name
        return ExperimentConfig.from_dict(data)


def _section(data: dict, key: str) -> dict:
    value = data.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigurationError("section must be a mapping", key)
    return value


def _reject_unknown(section: dict, allowed: Iterable[str], prefix: str) -> None:
    extra = sorted(set(section) - set(allowed))
    if extra:
        raise ConfigurationError("unknown key", f"{prefix}.{extra[0]}")


def _as_float(value, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"expected a number, got {value!r}", key)
    return float(value)


def _get_int(section: dict, name: str, default: int, key: str) -> int:
    value = section.get(name, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigurationError(f"expected an integer, got {value!r}", key)
    return value


def _parse_bases(section: dict) -> BasesConfig:
    section = dict(section)
    kind = section.pop("kind", "q_learning")
    if kind not in BASE_KINDS:
        raise ConfigurationError(f"unknown base kind {kind!r}; choose from {list(BASE_KINDS)}",
                                 "bases.kind")
    rates = section.pop("learning_rates", None)
    schedules = section.pop("schedules", None)
    if kind == "scripted":
        if not isinstance(schedules, list) or not schedules:
            raise ConfigurationError("scripted bases need a non-empty list of schedules",
                                     "bases.schedules")
        for sched in schedules:
            ScriptedBase(sched)
        _reject_unknown(section, (), "bases")
        return BasesConfig(kind, [float(r) for r in rates] if rates else [], {}, schedules)
    if rates is None:
        rates = list(PAPER_LR_GRID)
    if not isinstance(rates, list) or not rates:
        raise ConfigurationError("must be a non-empty list", "bases.learning_rates")
    rates = [_as_float(r, "bases.learning_rates") for r in rates]
    if any(r < 0.0 for r in rates):
        raise ConfigurationError("learning rates must be >= 0", "bases.learning_rates")
    if len(set(rates)) != len(rates):
        raise ConfigurationError("learning rates must be distinct", "bases.learning_rates")
    _reject_unknown(section, AGENT_PARAMS[kind], "bases")
    params = {k: _as_float(v, f"bases.{k}") for k, v in section.items()}
    return BasesConfig(kind, rates, params, None)


# ---------------------------------------------------------------------------
# run records


@dataclass
class EpisodeRow:
    episode: int
    step: int
    base: int
    raw_return: float
    norm_return: float
    pulls: list[int]

    def to_dict(self) -> dict:
        return {"type": "episode", "episode": self.episode, "step": self.step, "base": self.base,
                "raw_return": self.raw_return, "norm_return": self.norm_return,
                "pulls": list(self.pulls)}


@dataclass
class RunRecord:
    config: dict
    seed: int
    base_indices: list[int]
    rows: list[EpisodeRow] = field(default_factory=list)
    final: dict | None = None
    truncated: dict | None = None
    # extra header fields, e.g. CLI overrides
    meta: dict = field(default_factory=dict)

    @property
    def strategy(self) -> str:
        return self.config["strategy"]["name"]

    @property
    def alphas(self) -> list:
        rates = self.config["bases"].get("learning_rates") or []
        return [rates[k] if k < len(rates) else None for k in self.base_indices]

    @property
    def m(self) -> int:
        return len(self.base_indices)

    @property
    def selections(self) -> list[int]:
        return [r.base for r in self.rows]

    @property
    def raw_returns(self) -> np.ndarray:
        return np.array([r.raw_return for r in self.rows])

    @property
    def norm_returns(self) -> np.ndarray:
        return np.array([r.norm_return for r in self.rows])

    @property
    def final_pulls(self) -> list[int]:
        return list(self.rows[-1].pulls) if self.rows else [0] * self.m

    @property
    def max_return(self) -> float:
        return float(self.raw_returns.max())

    @property
    def mean_return(self) -> float:
        return float(self.raw_returns.mean())

    def header(self) -> dict:
        head = {"type": "header", "seed": self.seed, "bases": list(self.base_indices),
                "alphas": self.alphas, "config": self.config}
        head.update(self.meta)
        return head

    def lines(self) -> list[str]:
        out = [dumps(self.header())]
        out.extend(dumps(r.to_dict()) for r in self.rows)
        if self.truncated is not None:
            out.append(dumps({"type": "truncated", **self.truncated}))
        elif self.final is not None:
            out.append(dumps({"type": "final", **self.final}))
        return out

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(self.lines()) + "\n")
        return path

    @classmethod
    def read(cls, path: str | Path) -> RunRecord:
        record = None
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                obj = json.loads(line)
                kind = obj.pop("type", None)
                if kind == "header":
                    record = cls(obj.pop("config"), obj.pop("seed"), obj.pop("bases"))
                    obj.pop("alphas", None)
                    record.meta = obj
                elif record is None:
                    raise ValueError(f"{path}:{lineno}: record does not start with a header")
                elif kind == "episode":
                    record.rows.append(EpisodeRow(**obj))
                elif kind == "final":
                    record.final = obj
                elif kind == "truncated":
                    record.truncated = obj
                else:
                    raise ValueError(f"{path}:{lineno}: unknown line type {kind!r}")
        if record is None:
            raise ValueError(f"{path}: empty record")
        if record.final is None and record.truncated is None:
            # file cut off without a footer: treat as truncated after its last row
            record.truncated = {"episode": len(record.rows), "error": "missing footer"}
        return record


class RunAborted(RuntimeError):
    def __init__(self, record: RunRecord, cause: Exception):
        self.record = record
        self.cause = cause
        super().__init__(f"run aborted at episode {record.truncated['episode']}: {cause}")


def fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return json.dumps(x)
    s = format(x, ".17g")
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def dumps(obj) -> str:
    """Compact JSON with every float written at 17 significant digits."""
    if isinstance(obj, dict):
        return "{" + ",".join(json.dumps(str(k)) + ":" + dumps(v) for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(dumps(v) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(bool(obj) if obj is not None else None)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(float(obj))
    return json.dumps(obj)


# ---------------------------------------------------------------------------
# the episode loop


def _make_agents(cfg: ExperimentConfig, env, base_indices: Sequence[int]):
    kind = cfg.bases.kind
    if kind == "scripted":
        return [ScriptedBase(cfg.bases.schedules[k]) for k in base_indices]
    cls = QLearningAgent if kind == "q_learning" else PolicyGradientAgent
    return [cls(env.n_states, env.n_actions, cfg.bases.learning_rates[k], **cfg.bases.params)
            for k in base_indices]


def play_episode(env, agent, env_rng, agent_rng) -> list[Transition]:
    s = env.reset(env_rng)
    trajectory = []
    for _ in range(env.horizon):
        a = agent.act(s, agent_rng)
        s_next, r, terminal = env.step(s, a, env_rng)
        trajectory.append(Transition(s, a, r, s_next, terminal))
        s = s_next
        if terminal:
            break
    return trajectory


def run_experiment(cfg: ExperimentConfig, seed: int, *, base_indices: Sequence[int] | None = None,
                   episodes: int | None = None, path: str | Path | None = None) -> RunRecord:
    """Run one seeded model-selection experiment.

    ``base_indices`` restricts the run to a subset of the configured bases
    (positions in the learning-rate grid or schedule list); each keeps the
    random stream tied to its grid position, so a single-base run reproduces
    that base's behaviour inside a larger run. When ``path`` is given the
    record is written there, including after an aborted run.
    """
    cfg.validate()
    idx = list(range(cfg.m)) if base_indices is None else list(base_indices)
    if not idx or any(not 0 <= k < cfg.m for k in idx):
        raise ConfigurationError(f"base indices {idx} out of range for {cfg.m} bases", "bases")
    n_episodes = cfg.episodes if episodes is None else episodes
    if n_episodes < len(idx):
        raise ConfigurationError("fewer episodes than bases", "run.episodes")

    scripted = cfg.bases.kind == "scripted"
    env = None if scripted else make_env(cfg.env)
    bounds = (0.0, 1.0) if scripted else env.return_bounds
    env_rng = stream(seed, ENV_STREAM)
    agent_rngs = [stream(seed, BASE_STREAM_OFFSET + k) for k in idx]
    agents = _make_agents(cfg, env, idx)
    meta = make_strategy(cfg.strategy, len(idx), copy.deepcopy(cfg.strategy_config),
                         stream(seed, META_STREAM), bounds)

    record = RunRecord(cfg.to_dict(), seed, idx)
    steps = 0
    n = 0
    try:
        for n in range(1, n_episodes + 1):
            i = meta.sample()
            if scripted:
                rewards = [agents[i].scripted_return(n - 1, env_rng)]
                steps += 1
            else:
                trajectory = play_episode(env, agents[i], env_rng, agent_rngs[i])
                rewards = [tr.reward for tr in trajectory]
                agents[i].learn(trajectory)
                steps += len(trajectory)
            r_norm = meta.update(i, rewards)
            record.rows.append(EpisodeRow(n, steps, i, math.fsum(rewards), r_norm,
                                          meta.state.pulls))
    except (NumericalError, ContractViolation, FloatingPointError, ConfigurationError) as exc:
        record.truncated = {"episode": n, "error": f"{type(exc).__name__}: {exc}"}
        if isinstance(exc, NumericalError):
            record.truncated["snapshot"] = exc.snapshot
        if path is not None:
            record.write(path)
        raise RunAborted(record, exc) from exc
    record.final = meta.snapshot()
    if path is not None:
        record.write(path)
    return record


def run_fixed_baselines(cfg: ExperimentConfig, seed: int, *, out_dir: str | Path | None = None
                        ) -> list[RunRecord]:
    """One independent single-base run per grid entry, each for episodes // m episodes."""
    cfg.validate()
    per_base = cfg.episodes // cfg.m
    records = []
    for k in range(cfg.m):
        path = None if out_dir is None else Path(out_dir) / f"seed_{seed}_base_{k}.jsonl"
        records.append(run_experiment(cfg, seed, base_indices=[k], episodes=per_base, path=path))
    return records


# ---------------------------------------------------------------------------
# aggregation


def comparable_config(config: dict, *, keep_strategy: bool = True) -> dict:
    out = copy.deepcopy(config)
    out["run"].pop("seeds", None)
    out["run"].pop("out", None)
    if not keep_strategy:
        out.pop("strategy", None)
        out.pop("run", None)
    return out


@dataclass
class Summary:
    episodes: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    counts: np.ndarray
    moving_average: np.ndarray
    pull_totals: list[int]
    alphas: list
    seeds: list[int]
    truncated: list[dict]

    def final_window_mean(self, window: int) -> float:
        return float(self.mean[-window:].mean())


def moving_average(values: np.ndarray, window: int) -> np.ndarray:
    csum = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(1, len(values) + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def aggregate(records: Sequence[RunRecord], window: int = 50) -> Summary:
    """Per-episode mean/std of normalized return across seeds, plus pull totals."""
    if not records:
        raise ConfigurationError("nothing to aggregate", "records")
    ref = comparable_config(records[0].config)
    for rec in records[1:]:
        if comparable_config(rec.config) != ref or rec.base_indices != records[0].base_indices:
            raise ConfigurationError(
                f"record for seed {rec.seed} has a different config than seed {records[0].seed}",
                "config")
    length = max(len(r.rows) for r in records)
    mean = np.zeros(length)
    std = np.zeros(length)
    counts = np.zeros(length, dtype=int)
    for t in range(length):
        vals = np.array([r.rows[t].norm_return for r in records if len(r.rows) > t])
        mean[t] = vals.mean()
        std[t] = vals.std()
        counts[t] = len(vals)
    totals = [0] * records[0].m
    for rec in records:
        for k, p in enumerate(rec.final_pulls):
            totals[k] += p
    return Summary(np.arange(1, length + 1), mean, std, counts, moving_average(mean, window),
                   totals, records[0].alphas, [r.seed for r in records],
                   [{"seed": r.seed, **r.truncated} for r in records if r.truncated])


def growth_ratios(counts: Sequence[float]) -> list[float]:
    return [b / a for a, b in zip(counts, counts[1:])]


def sqrt_bound_check(records, suboptimal_base_index: int, N_values: Sequence[int]) -> list[float]:
    """Successive growth ratios of the suboptimal base's pull count across budgets.

    ``records[j]`` belongs to budget ``N_values[j]`` and is either one record
    or a list of seeds (averaged). Square-root scaling at 4x budget steps
    gives ratios near 2; linear scaling gives 4.
    """
    if len(records) != len(N_values):
        raise ConfigurationError("one record group per budget required", "N_values")
    counts = []
    for group, budget in zip(records, N_values):
        group = group if isinstance(group, (list, tuple)) else [group]
        for rec in group:
            if len(rec.rows) != budget:
                raise ConfigurationError(
                    f"record has {len(rec.rows)} episodes, expected {budget}", "N_values")
        counts.append(float(np.mean([rec.final_pulls[suboptimal_base_index] for rec in group])))
    return growth_ratios(counts)


# ---------------------------------------------------------------------------
# tables


def _table(header: dict, columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    buf.write("# config: " + dumps(header) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt_float(v) if isinstance(v, float) else ("" if v is None else v)
                         for v in row])
    return buf.getvalue()


def write_table(path: str | Path, header: dict, columns: Sequence[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_table(header, columns, rows), encoding="utf-8")
    return path


def read_table(path: str | Path) -> tuple[dict, list[dict]]:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("# config: "):
            raise ValueError(f"{path}: missing config header")
        header = json.loads(first[len("# config: "):])
        rows = [row for row in csv.DictReader(line for line in fh if not line.startswith("#"))]
    return header, rows


def reward_curve_rows(summary: Summary):
    for t in range(len(summary.episodes)):
        yield int(summary.episodes[t]), float(summary.mean[t]), float(summary.std[t])


def selection_rows(record: RunRecord):
    for row in record.rows:
        yield row.episode, row.base


def pull_count_rows(summary: Summary):
    for k, (alpha, pulls) in enumerate(zip(summary.alphas, summary.pull_totals)):
        yield k, alpha, pulls


def baseline_max_rows(baselines: Sequence[RunRecord]):
    """Mean over seeds of each grid entry's maximum raw episodic return."""
    by_base: dict[int, list[RunRecord]] = {}
    for rec in baselines:
        by_base.setdefault(rec.base_indices[0], []).append(rec)
    for k in sorted(by_base):
        recs = by_base[k]
        yield k, recs[0].alphas[0], float(np.mean([r.max_return for r in recs]))
