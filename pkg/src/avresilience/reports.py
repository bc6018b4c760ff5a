"""Render results as JSON, CSV or Markdown with a fixed field order."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any, Mapping

from .detection import CrossValidationResult, MarginReport, Metrics
from .simulation import BatchResult, ScenarioReport
from .simulation.batch import CSV_HEADER

FORMATS = ("json", "csv", "markdown")
SUFFIX = {"json": ".json", "csv": ".csv", "markdown": ".md"}
METRIC_ROWS = (("precision", "Precision"), ("recall", "Recall"), ("f1", "F1 Score"), ("accuracy", "Accuracy"))
MODEL_NAMES = {"rf": "Random Forest", "lr": "Logistic Regression", "knn": "KNN"}
MARGIN_HEADER = ("Detection margin", "Normal misclassified", "Attack misclassified", "FP rate", "FN rate")
TIMELINE_HEADER = ("time", "kind", "detail")


class ReportError(ValueError):
    pass


def _metric_values(result: Any) -> dict[str, float]:
    if isinstance(result, CrossValidationResult):
        return result.summary()
    if isinstance(result, Metrics):
        return {k: getattr(result, k) for k, _ in METRIC_ROWS}
    return {k: float(result[k]) for k, _ in METRIC_ROWS}


def table(header, rows, fmt: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return buf.getvalue()
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(str(c) for c in r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def _dump(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def metrics_report(results: Mapping[str, Any], fmt: str) -> str:
    """Metrics as rows, one column per model (models in the given order)."""
    models = list(results)
    values = {m: _metric_values(results[m]) for m in models}
    if fmt == "json":
        return _dump({"models": models, "metrics": values})
    digits = 3 if fmt == "markdown" else 6
    header = ["Metric"] + [MODEL_NAMES.get(m, m) for m in models]
    rows = [[label] + [f"{values[m][key]:.{digits}f}" for m in models] for key, label in METRIC_ROWS] if models else []
    return table(header, rows, fmt)


def margin_report(report: MarginReport, fmt: str) -> str:
    if fmt == "json":
        return _dump(report.to_dict())
    digits = 4 if fmt == "markdown" else 6
    rows = [
        [
            f"[{r.lower:g}, {r.upper:g}]",
            r.normal_misclassified,
            r.attack_misclassified,
            f"{r.fp_rate:.{digits}f}",
            f"{r.fn_rate:.{digits}f}",
        ]
        for r in report.rows
    ]
    return table(MARGIN_HEADER, rows, fmt)


def batch_report(result: BatchResult, fmt: str) -> str:
    if fmt == "json":
        return result.to_json()
    if fmt == "csv":
        return result.to_csv()
    rows = [
        [f"{c.speed:g}", f"{c.interval:g}", f"{c.success_rate:.2f}",
         "n/a" if c.mean_latency is None else f"{c.mean_latency:.3f}",
         "n/a" if c.max_latency is None else f"{c.max_latency:.3f}"]
        for c in result.cells
    ]
    return table(CSV_HEADER, rows, fmt)


def scenario_report(report: ScenarioReport, fmt: str) -> str:
    if fmt == "json":
        return report.to_json()
    rows = [
        [f"{e.time:.6f}", e.kind, json.dumps(e.detail, sort_keys=True)] for e in report.timeline
    ]
    return table(TIMELINE_HEADER, rows, fmt)


def emit_report(results: Any, fmt: str = "json") -> str:
    """Serialize ``results`` deterministically.

    Accepts a mapping of model name to metrics, a :class:`MarginReport`, a
    :class:`BatchResult` or a :class:`ScenarioReport`.
    """
    if fmt not in FORMATS:
        raise ReportError(f"unsupported format {fmt!r}; choose from {', '.join(FORMATS)}")
    if isinstance(results, MarginReport):
        return margin_report(results, fmt)
    if isinstance(results, BatchResult):
        return batch_report(results, fmt)
    if isinstance(results, ScenarioReport):
        return scenario_report(results, fmt)
    if isinstance(results, Mapping):
        return metrics_report(results, fmt)
    raise ReportError(f"cannot report on {type(results).__name__}")


def write_report(results: Any, out_dir: str | Path, stem: str, fmt: str = "json") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{stem}{SUFFIX[fmt]}"
    path.write_text(emit_report(results, fmt), encoding="utf-8")
    return path
