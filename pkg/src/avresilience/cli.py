"""Command-line entry point: ``avr <command> [options]``.

Exit codes: 0 success, 1 operational error (including an integrity Mismatch from
``verify``), 2 usage error.  Option values come from flags first, then the JSON
``--config`` file, then built-in defaults; ``AVR_SEED`` supplies the default seed.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from .detection import (
    REFERENCE_BANDS,
    DetectorKind,
    MarginReport,
    band_grid,
    cross_validate,
    fit,
    margin_analysis,
    select_threshold,
)
from .clock import WallClock
from .integrity import (
    ArtifactManifest,
    SchedulePolicy,
    TrustedBaseline,
    Verdict,
    create_baseline,
    restore,
    run_scheduler,
    validate_once,
)
from .reports import SUFFIX, ReportError, emit_report, table, write_report
from .simulation import (
    AttackRecord,
    BatchResult,
    CellResult,
    Scenario,
    ScenarioReport,
    TimelineEvent,
    batch_run,
    stop_sign_scenario,
    run_scenario,
)
from .telemetry import SchemaMap, load_avp_dataset, split_stratified, synthetic_blinding_dataset
from .threats import CatalogError, ThreatCatalog

DEFAULTS: dict[str, Any] = {
    "model": ["rf"],
    "folds": 5,
    "synthetic": 20_000,
    "out": "avr-out",
    "format": "markdown",
    "interval": 1.0,
    "policy": "fixed",
    "speeds": [0.5, 0.75, 1.0, 1.25, 1.5, 1.75],
    "intervals": [1.0, 3.0, 5.0],
    "trials": 5,
    "controls": 1,
    "selection": "zero_fn_min_fp",
    "bands": "grid",
}


class UsageError(Exception):
    pass


class Options:
    """Flag > config file > default lookup."""

    def __init__(self, args: argparse.Namespace, config: dict):
        self._args = args
        self._config = config

    def get(self, name: str, default: Any = None) -> Any:
        value = getattr(self._args, name, None)
        if value is not None:
            return value
        if name in self._config:
            return self._config[name]
        if name == "seed":
            env = os.environ.get("AVR_SEED")
            if env is not None:
                try:
                    return int(env)
                except ValueError:
                    raise UsageError(f"AVR_SEED must be an integer, got {env!r}") from None
            return 0
        return DEFAULTS.get(name, default)

    def flag(self, name: str) -> Any:
        return getattr(self._args, name, None)

    def explicit(self, name: str) -> Any:
        """Value from a flag or the config file, ignoring built-in defaults."""
        value = self.flag(name)
        return value if value is not None else self._config.get(name)

    def path(self, name: str, must_exist: bool = True) -> Path | None:
        value = self.get(name)
        if value is None:
            return None
        p = Path(value)
        if must_exist and not p.exists():
            raise FileNotFoundError(f"--{name.replace('_', '-')}: {p} does not exist")
        return p

    def require(self, name: str) -> Any:
        value = self.get(name)
        if value is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")
        return value


def _dataset(opts: Options):
    path = opts.path("dataset")
    if path is not None:
        schema = opts.path("schema")
        return load_avp_dataset(path, SchemaMap.from_file(schema) if schema else None)
    return synthetic_blinding_dataset(int(opts.get("synthetic")), seed=int(opts.get("seed")))


def _models(opts: Options) -> list[str]:
    models = opts.get("model")
    models = [models] if isinstance(models, str) else list(models)
    return [DetectorKind.parse(m).value for m in models]


def _out(opts: Options) -> Path:
    out = Path(opts.get("out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _print(text: str) -> None:
    sys.stdout.write(text)


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


# -- commands -------------------------------------------------------------------


def cmd_train(opts: Options) -> int:
    ds = _dataset(opts)
    out = _out(opts)
    for kind in _models(opts):
        model = fit(ds, kind, opts.get("hyperparams"), seed=int(opts.get("seed")))
        model.save(out / f"model_{kind}.json")
        _print(f"trained {kind} on {len(ds)} samples -> {out / f'model_{kind}.json'}\n")
    return 0


def cmd_evaluate(opts: Options) -> int:
    ds = _dataset(opts)
    out = _out(opts)
    results = {
        kind: cross_validate(ds, kind, opts.get("hyperparams"), k=int(opts.get("folds")), seed=int(opts.get("seed")))
        for kind in _models(opts)
    }
    write_report(results, out, "metrics", "json")
    write_report(results, out, "metrics", "markdown")
    _print(emit_report(results, opts.get("format")))
    return 0


def cmd_tune_threshold(opts: Options) -> int:
    ds = _dataset(opts)
    out = _out(opts)
    seed = int(opts.get("seed"))
    kind = _models(opts)[0]
    folds = split_stratified(ds, int(opts.get("folds")), seed)
    model = fit(ds.subset(folds.train_indices(0)), kind, opts.get("hyperparams"), seed=seed)
    eval_set = ds.subset(folds.test_indices(0))
    write_report(margin_analysis(model, eval_set, REFERENCE_BANDS), out, "margins", "markdown")
    bands = band_grid() if opts.get("bands") == "grid" else REFERENCE_BANDS
    report = margin_analysis(model, eval_set, bands)
    threshold = select_threshold(report, opts.get("selection"), opts.get("target_fp"))
    write_report(report, out, "margins", "json")
    model.with_threshold(threshold).save(out / f"model_{kind}.json")
    _write(out / "threshold.json", json.dumps({"model": kind, "threshold": threshold}, sort_keys=True) + "\n")
    _print(emit_report(margin_analysis(model, eval_set, REFERENCE_BANDS), opts.get("format")))
    _print(f"selected threshold: {threshold:g}\n")
    return 0


def cmd_baseline(opts: Options) -> int:
    manifest = ArtifactManifest.load(opts.path("manifest") or opts.require("manifest"))
    backup_dir = Path(opts.require("backup_dir"))
    target = opts.path("baseline", must_exist=False) or backup_dir / "baseline.json"
    baseline = create_baseline(manifest, backup_dir, target)
    _print(f"baseline of {len(baseline.records)} artifact(s) written to {target}\n")
    return 0


def cmd_verify(opts: Options) -> int:
    manifest = ArtifactManifest.load(opts.path("manifest") or opts.require("manifest"))
    baseline = TrustedBaseline.load(opts.path("baseline") or opts.require("baseline"))
    duration = opts.get("duration")
    if duration is None:
        events = [validate_once(manifest, baseline, trigger="manual")]
    else:
        policy = _schedule(opts)
        events = list(run_scheduler(manifest, baseline, policy, WallClock(), float(duration)))
    lines = "".join(e.to_json_line() + "\n" for e in events)
    if opts.explicit("out") is not None:
        _write(_out(opts) / "validation.ndjson", lines)
    _print(lines)
    mismatched = sorted({a for e in events for a in e.mismatched})
    if mismatched and opts.get("restore"):
        restore(baseline, mismatched)
        after = validate_once(manifest, baseline, trigger="post-restore")
        _print(after.to_json_line() + "\n")
    return 1 if any(e.result is Verdict.MISMATCH for e in events) else 0


def _schedule(opts: Options) -> SchedulePolicy:
    mode = opts.get("policy")
    interval = float(opts.get("interval"))
    if mode == "fixed":
        return SchedulePolicy.fixed(interval)
    if mode == "staggered":
        return SchedulePolicy.staggered(interval)
    return SchedulePolicy.event_driven()


def cmd_simulate(opts: Options) -> int:
    path = opts.path("scenario")
    scenario = Scenario.load(path) if path is not None else stop_sign_scenario()
    overrides = {}
    if opts.flag("seed") is not None:
        overrides["seed"] = opts.flag("seed")
    if opts.flag("interval") is not None or opts.flag("policy") is not None:
        overrides["schedule"] = _schedule(opts).to_dict()
    if overrides:
        scenario = Scenario.from_dict({**scenario.to_dict(), **overrides})
    report = run_scenario(scenario)
    out = _out(opts)
    _write(out / "report.json", report.to_json())
    _write(out / "speed_profile.csv", report.speed_csv())
    fmt = opts.get("format")
    if fmt != "json":
        write_report(report, out, "timeline", fmt)
    _print(emit_report(report, fmt if fmt != "json" else "markdown"))
    return 0


def cmd_batch(opts: Options) -> int:
    result = batch_run(
        [float(s) for s in opts.get("speeds")],
        [float(i) for i in opts.get("intervals")],
        int(opts.get("trials")),
        seed=int(opts.get("seed")),
        controls=int(opts.get("controls")),
    )
    out = _out(opts)
    _write(out / "batch.csv", result.to_csv())
    _write(out / "batch.json", result.to_json())
    _print(emit_report(result, opts.get("format")))
    return 0


def cmd_threats(opts: Options) -> int:
    catalog = ThreatCatalog.load(opts.path("catalog"))
    try:
        entries = catalog.filter(opts.get("layer"))
    except CatalogError as exc:
        raise UsageError(str(exc)) from None
    fmt = opts.get("format")
    if fmt == "json":
        text = json.dumps({"entries": [e.to_dict() for e in entries]}, indent=2) + "\n"
    else:
        header = ("Layer", "Attack Surface", "Impact", "Mitigation Strategy", "Covered by")
        rows = [[e.layer, e.attack_surface, e.impact, e.mitigation, ", ".join(e.covered_by)] for e in entries]
        text = table(header, rows, fmt)
    _print(text)
    if opts.explicit("out") is not None:
        _write(_out(opts) / f"threats{SUFFIX[fmt]}", text)
    return 0


def _load_results(path: Path):
    data = json.loads(path.read_text(encoding="utf-8"))
    if "bands" in data:
        return MarginReport.from_dict(data)
    if "cells" in data:
        cells = []
        for c in data["cells"]:
            c = {k: v for k, v in c.items() if k != "success_rate"}
            cells.append(CellResult(**c))
        return BatchResult(tuple(cells))
    if "timeline" in data:
        return ScenarioReport(
            scenario=data["scenario"],
            timeline=[TimelineEvent(e["time"], e["kind"], e["detail"]) for e in data["timeline"]],
            speed_profile=[tuple(p) for p in data["speed_profile"]],
            attacks=[
                AttackRecord(a["index"], a["kind"], a["onset"], a["end"], a["artifact_id"], a["detection"],
                             a["switchover"], a["restore_complete"])
                for a in data["attacks"]
            ],
            stop_sign_seen=data["stop_sign_seen"],
            halted_at=data["halted_at"],
            safety_violations=data["safety_violations"],
            validations=data["validations"],
            anomaly=data.get("anomaly"),
            escalations=data.get("escalations", []),
        )
    if "metrics" in data:
        return {m: data["metrics"][m] for m in data["models"]}
    raise ReportError(f"{path}: unrecognized results file")


def cmd_report(opts: Options) -> int:
    results = _load_results(opts.path("input") or opts.require("input"))
    fmt = opts.get("format")
    text = emit_report(results, fmt)
    if opts.explicit("out") is not None:
        stem = Path(opts.get("input")).stem
        write_report(results, opts.get("out"), stem, fmt)
    _print(text)
    return 0


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "tune-threshold": cmd_tune_threshold,
    "baseline": cmd_baseline,
    "verify": cmd_verify,
    "simulate": cmd_simulate,
    "batch": cmd_batch,
    "threats": cmd_threats,
    "report": cmd_report,
}


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option defaults")
    common.add_argument("--seed", type=int, help="random seed (default: $AVR_SEED or 0)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--format", choices=["json", "csv", "markdown"])

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--dataset", help="labeled CSV dataset")
    data.add_argument("--schema", help="JSON schema map for --dataset columns")
    data.add_argument("--synthetic", type=int, metavar="N", help="synthetic sample count when no --dataset")
    data.add_argument("--model", nargs="+", choices=["rf", "lr", "knn"])
    data.add_argument("--folds", type=int)

    sched = argparse.ArgumentParser(add_help=False)
    sched.add_argument("--interval", type=float, help="validation interval in seconds")
    sched.add_argument("--policy", choices=["fixed", "staggered", "event"])

    parser = argparse.ArgumentParser(prog="avr", description="Resilient perception toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common, data], help="fit detector(s) and save them")
    sub.add_parser("evaluate", parents=[common, data], help="stratified k-fold metrics")
    p = sub.add_parser("tune-threshold", parents=[common, data], help="margin analysis and threshold choice")
    p.add_argument("--selection", choices=["zero_fn_min_fp", "target_fp"])
    p.add_argument("--target-fp", type=float)
    p.add_argument("--bands", choices=["grid", "reference"])
    p = sub.add_parser("baseline", parents=[common], help="record digests and backups")
    p.add_argument("--manifest")
    p.add_argument("--baseline")
    p.add_argument("--backup-dir")
    p = sub.add_parser("verify", parents=[common, sched], help="validate artifacts against a baseline")
    p.add_argument("--manifest")
    p.add_argument("--baseline")
    p.add_argument("--duration", type=float, help="run the schedule for this many seconds")
    p.add_argument("--restore", action="store_true", default=None, help="restore mismatched artifacts")
    p = sub.add_parser("simulate", parents=[common, sched], help="run one scenario")
    p.add_argument("--scenario", help="scenario JSON (default: tamper at 10 s, stop sign at 20 s)")
    p = sub.add_parser("batch", parents=[common], help="speed x interval tamper grid")
    p.add_argument("--speeds", nargs="+", type=float)
    p.add_argument("--intervals", nargs="+", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--controls", type=int)
    p = sub.add_parser("threats", parents=[common], help="print the threat catalog")
    p.add_argument("--layer")
    p.add_argument("--catalog", help="alternate catalog JSON")
    p = sub.add_parser("report", parents=[common], help="re-render a results JSON file")
    p.add_argument("--input")
    return parser


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        config = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"unreadable config {path}: {exc}") from exc
    if not isinstance(config, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in config.items()}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        opts = Options(args, _load_config(args.config))
        return COMMANDS[args.command](opts)
    except UsageError as exc:
        print(f"avr: usage error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"avr: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
