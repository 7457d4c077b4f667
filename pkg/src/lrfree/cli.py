"""Command-line front end: validate, run, sweep, baseline and report."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from . import harness
from .core import ConfigurationError
from .harness import ExperimentConfig, RunAborted, RunRecord

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3


class CliError(Exception):
    def __init__(self, code: int, message: str, key: str | None = None):
        self.code = code
        self.key = key
        super().__init__(message)


# ---------------------------------------------------------------------------
# config loading


def load_config_dict(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config: {exc.strerror}", "config") from None
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"not valid YAML: {exc}", "config") from None
    return data if data is not None else {}


def apply_override(data: dict, assignment: str) -> None:
    """Apply ``a.b.c=value``; ``value`` is parsed as a YAML scalar or list."""
    if "=" not in assignment:
        raise ConfigurationError(f"override {assignment!r} is not key=value", "--set")
    key, raw = assignment.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigurationError(f"empty key in override {assignment!r}", "--set")
    value = yaml.safe_load(raw) if raw.strip() else ""
    node = data
    for part in parts[:-1]:
        nxt = node.setdefault(part, {})
        if not isinstance(nxt, dict):
            raise ConfigurationError("cannot descend into a non-section", key)
        node = nxt
    leaf = parts[-1]
    if isinstance(node.get(leaf), dict) and not isinstance(value, dict):
        # ``strategy=ucb`` is shorthand for ``strategy.name=ucb``
        node[leaf]["name"] = value
    elif len(parts) == 1 and leaf in ("strategy", "env") and not isinstance(value, dict):
        node[leaf] = {"name": value}
    else:
        node[leaf] = value


def resolve_config(args) -> tuple[ExperimentConfig, list[str]]:
    data = load_config_dict(args.config)
    overrides = list(args.set or [])
    for item in overrides:
        apply_override(data, item)
    data.setdefault("run", {})
    if getattr(args, "seeds", None):
        data["run"]["seeds"] = parse_int_list(args.seeds)
    if getattr(args, "out", None):
        data["run"]["out"] = args.out
    return ExperimentConfig.from_dict(data), overrides


def parse_int_list(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ConfigurationError(f"expected comma-separated integers, got {text!r}", "--seeds") from None


# ---------------------------------------------------------------------------
# artifact writers


def _record_path(out: Path, strategy: str, seed: int) -> Path:
    return out / strategy / f"seed_{seed}.jsonl"


def _write_strategy_artifacts(cfg: ExperimentConfig, records: list[RunRecord], out: Path,
                              overrides: list[str]) -> dict:
    header = _table_header(records[0], overrides)
    summary = harness.aggregate(records, cfg.window)
    sdir = out / cfg.strategy
    harness.write_table(sdir / "reward_curve.csv", header, ["episode", "mean", "std"],
                        harness.reward_curve_rows(summary))
    for rec in records:
        harness.write_table(sdir / f"selection_trace_seed_{rec.seed}.csv", _table_header(rec, overrides),
                            ["episode", "base"], harness.selection_rows(rec))
    harness.write_table(sdir / "pull_counts.csv", header, ["base", "alpha", "pulls"],
                        harness.pull_count_rows(summary))
    return {"strategy": cfg.strategy, "summary": summary}


def _table_header(record: RunRecord, overrides: list[str]) -> dict:
    head = {"config": record.config, "seed": record.seed, "bases": record.base_indices}
    if overrides:
        head["overrides"] = overrides
    return head


def _run_seeds(cfg: ExperimentConfig, out: Path, overrides: list[str]) -> list[RunRecord]:
    records = []
    for seed in cfg.seeds:
        path = _record_path(out, cfg.strategy, seed)
        try:
            rec = harness.run_experiment(cfg, seed)
        except RunAborted as exc:
            exc.record.meta = {"overrides": overrides} if overrides else {}
            exc.record.write(path)
            raise CliError(EXIT_RUNTIME, f"seed {seed}: {exc}") from exc
        rec.meta = {"overrides": overrides} if overrides else {}
        rec.write(path)
        records.append(rec)
    return records


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(args) -> int:
    paths = list(args.paths or []) + ([args.config] if args.config else [])
    if not paths:
        raise CliError(EXIT_VALIDATION, "no config given", "--config")
    failed = 0
    for path in paths:
        try:
            data = load_config_dict(path)
            for item in args.set or []:
                apply_override(data, item)
            ExperimentConfig.from_dict(data)
        except ConfigurationError as exc:
            failed += 1
            print(f"INVALID {path}: {exc}")
        else:
            print(f"OK {path}")
    return EXIT_VALIDATION if failed else EXIT_OK


def cmd_run(args) -> int:
    cfg, overrides = resolve_config(args)
    out = Path(cfg.out)
    records = _run_seeds(cfg, out, overrides)
    _write_strategy_artifacts(cfg, records, out, overrides)
    print(f"wrote {len(records)} record(s) for {cfg.strategy} under {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg, overrides = resolve_config(args)
    names = [s.strip() for s in (args.strategies or "").split(",") if s.strip()]
    if not names:
        raise CliError(EXIT_VALIDATION, "strategy list is empty", "--strategies")
    configs = [cfg.with_strategy(name) for name in names]
    out = Path(cfg.out)
    rows = []
    for scfg in configs:
        records = _run_seeds(scfg, out, overrides)
        result = _write_strategy_artifacts(scfg, records, out, overrides)
        summary = result["summary"]
        rows.append([scfg.strategy, summary.final_window_mean(scfg.window), *summary.pull_totals])
    header = {"config": cfg.to_dict(), "strategies": names}
    if overrides:
        header["overrides"] = overrides
    columns = ["strategy", "mean_final_window_return"] + [f"pulls_base_{k}" for k in range(cfg.m)]
    harness.write_table(out / "comparison.csv", header, columns, rows)
    print(f"swept {len(names)} strategies x {len(cfg.seeds)} seeds under {out}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    cfg, overrides = resolve_config(args)
    out = Path(cfg.out) / "baseline"
    records = []
    for seed in cfg.seeds:
        try:
            recs = harness.run_fixed_baselines(cfg, seed, out_dir=out)
        except RunAborted as exc:
            raise CliError(EXIT_RUNTIME, f"seed {seed}: {exc}") from exc
        records.extend(recs)
    header = {"config": cfg.to_dict(), "seeds": list(cfg.seeds)}
    if overrides:
        header["overrides"] = overrides
    harness.write_table(out / "baseline_max.csv", header, ["base", "alpha", "max_return"],
                        harness.baseline_max_rows(records))
    print(f"wrote {len(records)} baseline record(s) under {out}")
    return EXIT_OK


def _setting_key(config: dict) -> str:
    return json.dumps({"env": config.get("env"), "bases": config.get("bases")}, sort_keys=True)


def cmd_report(args) -> int:
    root = Path(args.dir or args.out or "")
    if not root.is_dir():
        raise CliError(EXIT_VALIDATION, f"{root} is not a directory", "dir")
    problems: list[str] = []
    by_strategy: dict[str, list[RunRecord]] = {}
    baselines: list[RunRecord] = []
    for path in sorted(root.rglob("*.jsonl")):
        if "report" in path.relative_to(root).parts:
            continue
        try:
            rec = RunRecord.read(path)
        except (ValueError, KeyError, TypeError) as exc:
            problems.append(f"unreadable {path}: {exc}")
            continue
        if rec.truncated is not None:
            problems.append(f"truncated {path} at episode {rec.truncated.get('episode')}: "
                            f"{rec.truncated.get('error')}")
        if path.parent.name == "baseline":
            baselines.append(rec)
        else:
            by_strategy.setdefault(rec.strategy, []).append(rec)
    if not by_strategy:
        for p in problems:
            print(p, file=sys.stderr)
        raise CliError(EXIT_VALIDATION, f"no run records found under {root}", "dir")

    settings = {_setting_key(r.config) for recs in by_strategy.values() for r in recs}
    settings |= {_setting_key(r.config) for r in baselines}
    if len(settings) > 1:
        raise CliError(EXIT_VALIDATION, "artifacts mix different env/bases settings; refusing to merge",
                       "dir")

    baseline_max = {k: v for k, _, v in harness.baseline_max_rows(baselines)} if baselines else {}
    if not baselines:
        problems.append(f"no baseline records under {root / 'baseline'}; max_return left blank")
    rdir = root / "report"
    written = []
    for name, records in sorted(by_strategy.items()):
        records.sort(key=lambda r: r.seed)
        try:
            summary = harness.aggregate(records, records[0].config["run"].get("window", 50))
        except ConfigurationError as exc:
            problems.append(f"{name}: {exc}")
            continue
        header = {"config": records[0].config, "seeds": [r.seed for r in records]}
        if summary.truncated:
            header["truncated"] = summary.truncated
        written.append(harness.write_table(
            rdir / f"{name}_reward_curve.csv", header, ["episode", "mean", "std", "moving_average"],
            ((int(e), float(m), float(s), float(a)) for e, m, s, a in
             zip(summary.episodes, summary.mean, summary.std, summary.moving_average))))
        if summary.truncated:
            _append_markers(written[-1], summary.truncated)
        written.append(harness.write_table(
            rdir / f"{name}_selection.csv", header, ["seed", "episode", "base"],
            ((rec.seed, row.episode, row.base) for rec in records for row in rec.rows)))
        written.append(harness.write_table(
            rdir / f"{name}_pulls_vs_baseline.csv", header, ["base", "alpha", "pulls", "max_return"],
            ((k, alpha, pulls, baseline_max.get(records[0].base_indices[k]))
             for k, alpha, pulls in harness.pull_count_rows(summary))))
    for p in problems:
        print(p, file=sys.stderr)
    print(f"wrote {len(written)} report file(s) under {rdir}")
    return EXIT_OK if written else EXIT_VALIDATION


def _append_markers(path: Path, truncated: list[dict]) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for t in truncated:
            fh.write(f"# truncated: seed={t['seed']} episode={t.get('episode')} error={t.get('error')}\n")


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lrfree", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, seeds=True):
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable), e.g. strategy.delta=0.1")
        if seeds:
            p.add_argument("--seeds", help="comma-separated seeds, e.g. 1,2,3")
        p.add_argument("--out", help="output directory")

    common(sub.add_parser("run", help="run one strategy over seeds"))
    p = sub.add_parser("sweep", help="run several strategies on the same setup")
    common(p)
    p.add_argument("--strategies", required=True, help="comma-separated strategy names")
    common(sub.add_parser("baseline", help="fixed-learning-rate baselines"))
    p = sub.add_parser("report", help="emit plot-ready tables from an artifact directory")
    p.add_argument("dir", nargs="?")
    p.add_argument("--out")
    p = sub.add_parser("validate", help="check configs without running")
    p.add_argument("paths", nargs="*")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    return parser


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "baseline": cmd_baseline, "report": cmd_report,
            "validate": cmd_validate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        _report_error("validation", str(exc), exc.key)
        return EXIT_VALIDATION
    except CliError as exc:
        _report_error("validation" if exc.code == EXIT_VALIDATION else "runtime", str(exc), exc.key)
        return exc.code
    except (RuntimeError, FloatingPointError, OSError) as exc:
        _report_error("runtime", f"{type(exc).__name__}: {exc}", None)
        return EXIT_RUNTIME


def _report_error(kind: str, message: str, key: str | None) -> None:
    print(json.dumps({"error": kind, "key": key, "message": message}), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
