"""Classifier metrics (Abnormal is the positive class) and stratified cross-validation."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from ..telemetry import LabeledDataset, split_stratified
from .model import DetectorKind, DetectorModel, fit

METRIC_NAMES = ("precision", "recall", "f1", "accuracy")


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict[str, int]:
        return {"TP": self.tp, "FP": self.fp, "TN": self.tn, "FN": self.fn}


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    accuracy: float
    confusion: Confusion

    @classmethod
    def from_confusion(cls, c: Confusion) -> "Metrics":
        precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
        recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        accuracy = (c.tp + c.tn) / c.total if c.total else 0.0
        return cls(precision, recall, f1, accuracy, c)

    def to_dict(self) -> dict[str, Any]:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "accuracy": self.accuracy,
            "confusion": self.confusion.to_dict(),
        }


def confusion(y_true: np.ndarray, y_pred: np.ndarray) -> Confusion:
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    return Confusion(
        tp=int(np.count_nonzero(y_true & y_pred)),
        fp=int(np.count_nonzero(~y_true & y_pred)),
        tn=int(np.count_nonzero(~y_true & ~y_pred)),
        fn=int(np.count_nonzero(y_true & ~y_pred)),
    )


def evaluate(model: DetectorModel, dataset: LabeledDataset) -> Metrics:
    return Metrics.from_confusion(confusion(dataset.labels, model.decisions(dataset.features)))


@dataclass(frozen=True)
class CrossValidationResult:
    kind: DetectorKind
    k: int
    folds: tuple[Metrics, ...]
    fold_predictions: tuple[np.ndarray, ...] = field(repr=False, default=())
    fold_indices: tuple[np.ndarray, ...] = field(repr=False, default=())

    def mean(self, name: str) -> float:
        return float(np.mean([getattr(m, name) for m in self.folds]))

    @property
    def precision(self) -> float:
        return self.mean("precision")

    @property
    def recall(self) -> float:
        return self.mean("recall")

    @property
    def f1(self) -> float:
        return self.mean("f1")

    @property
    def accuracy(self) -> float:
        return self.mean("accuracy")

    def summary(self) -> dict[str, float]:
        return {name: self.mean(name) for name in METRIC_NAMES}

    def to_dict(self) -> dict[str, Any]:
        return {
            "model": self.kind.value,
            "folds": self.k,
            "mean": self.summary(),
            "per_fold": [m.to_dict() for m in self.folds],
        }


def cross_validate(
    dataset: LabeledDataset,
    kind: "DetectorKind | str" = DetectorKind.RANDOM_FOREST,
    hyperparams: Mapping[str, Any] | None = None,
    k: int = 5,
    seed: int = 0,
    workers: int = 1,
) -> CrossValidationResult:
    """Stratified k-fold evaluation; the reported means are unweighted over folds.

    Fold ``i`` trains with seed ``seed + i`` so results do not depend on the
    order in which folds run (``workers > 1`` trains folds on a thread pool).
    """
    kind = DetectorKind.parse(kind)
    assignment = split_stratified(dataset, k, seed)

    def run_fold(i: int) -> tuple[Metrics, np.ndarray, np.ndarray]:
        train = dataset.subset(assignment.train_indices(i))
        test_idx = assignment.test_indices(i)
        model = fit(train, kind, hyperparams, seed=seed + i)
        pred = model.decisions(dataset.features[test_idx])
        return Metrics.from_confusion(confusion(dataset.labels[test_idx], pred)), pred, test_idx

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_fold, range(k)))
    else:
        results = [run_fold(i) for i in range(k)]
    return CrossValidationResult(
        kind,
        k,
        tuple(r[0] for r in results),
        tuple(r[1] for r in results),
        tuple(r[2] for r in results),
    )
