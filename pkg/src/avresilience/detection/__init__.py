"""Anomaly-based intrusion detection: scorers, decision rule, evaluation, margins."""
from .evaluation import Confusion, CrossValidationResult, Metrics, confusion, cross_validate, evaluate
from .margins import (
    REFERENCE_BANDS,
    MarginError,
    MarginReport,
    MarginRow,
    band_grid,
    margin_analysis,
    margin_rows,
    select_threshold,
)
from .model import DetectorError, DetectorKind, DetectorModel, classify, fit, score

__all__ = [
    "Confusion",
    "CrossValidationResult",
    "DetectorError",
    "DetectorKind",
    "DetectorModel",
    "MarginError",
    "MarginReport",
    "MarginRow",
    "Metrics",
    "REFERENCE_BANDS",
    "band_grid",
    "classify",
    "confusion",
    "cross_validate",
    "evaluate",
    "fit",
    "margin_analysis",
    "margin_rows",
    "score",
    "select_threshold",
]
