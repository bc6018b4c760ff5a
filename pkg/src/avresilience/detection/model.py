"""Detector = (abnormality scorer, learned memory) plus the alarm threshold."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from ..telemetry import Label, LabeledDataset
from .forest import RandomForest
from .linear import LogisticRegression
from .neighbors import KNearestNeighbors

DEFAULT_THRESHOLD = 0.5


class DetectorError(ValueError):
    pass


class DetectorKind(str, enum.Enum):
    RANDOM_FOREST = "rf"
    LOGISTIC_REGRESSION = "lr"
    K_NEAREST_NEIGHBOR = "knn"

    @classmethod
    def parse(cls, value: "str | DetectorKind") -> "DetectorKind":
        if isinstance(value, DetectorKind):
            return value
        aliases = {
            "rf": cls.RANDOM_FOREST,
            "randomforest": cls.RANDOM_FOREST,
            "lr": cls.LOGISTIC_REGRESSION,
            "logisticregression": cls.LOGISTIC_REGRESSION,
            "knn": cls.K_NEAREST_NEIGHBOR,
            "knearestneighbor": cls.K_NEAREST_NEIGHBOR,
        }
        key = str(value).replace("_", "").replace("-", "").lower()
        if key not in aliases:
            raise DetectorError(f"unknown detector kind {value!r}")
        return aliases[key]


DEFAULT_HYPERPARAMS: dict[DetectorKind, dict[str, Any]] = {
    DetectorKind.RANDOM_FOREST: {
        "n_trees": 100,
        "max_depth": 16,
        "max_features": "sqrt",
        "bootstrap": True,
        "min_samples_split": 2,
        "max_bins": 64,
    },
    DetectorKind.LOGISTIC_REGRESSION: {"iterations": 1000, "learning_rate": 0.5, "l2": 0.0},
    DetectorKind.K_NEAREST_NEIGHBOR: {"k": 5},
}
# scale-sensitive scorers get z-scored inputs
SCALED_KINDS = {DetectorKind.LOGISTIC_REGRESSION, DetectorKind.K_NEAREST_NEIGHBOR}


def _make_scorer(kind: DetectorKind, hyperparams: Mapping[str, Any]):
    try:
        if kind is DetectorKind.RANDOM_FOREST:
            return RandomForest(**hyperparams)
        if kind is DetectorKind.LOGISTIC_REGRESSION:
            return LogisticRegression(**hyperparams)
        return KNearestNeighbors(**hyperparams)
    except (TypeError, ValueError) as exc:
        raise DetectorError(f"invalid hyperparameters for {kind.value}: {exc}") from exc


@dataclass
class DetectorModel:
    kind: DetectorKind
    hyperparams: dict[str, Any]
    feature_names: tuple[str, ...]
    scorer: Any = field(repr=False)
    threshold: float = DEFAULT_THRESHOLD
    scaler_mean: np.ndarray | None = field(default=None, repr=False)
    scaler_std: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if not 0.0 <= self.threshold <= 1.0:
            raise DetectorError(f"threshold must lie in [0, 1], got {self.threshold}")

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def with_threshold(self, threshold: float) -> "DetectorModel":
        return DetectorModel(
            self.kind, dict(self.hyperparams), self.feature_names, self.scorer,
            float(threshold), self.scaler_mean, self.scaler_std,
        )

    def _prepare(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise DetectorError(f"expected {self.n_features} features, got {X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise DetectorError("non-finite feature value")
        if self.scaler_mean is not None:
            X = (X - self.scaler_mean) / self.scaler_std
        return X

    def scores(self, X: np.ndarray) -> np.ndarray:
        """Abnormality in [0, 1] for each row of ``X``."""
        return np.clip(self.scorer.abnormality(self._prepare(X)), 0.0, 1.0)

    def score(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise DetectorError("score expects one feature vector")
        return float(self.scores(x)[0])

    def decisions(self, X: np.ndarray) -> np.ndarray:
        """1 (Abnormal) where the score strictly exceeds the threshold."""
        return (self.scores(X) > self.threshold).astype(np.int8)

    def classify(self, x) -> Label:
        return Label.ABNORMAL if self.score(x) > self.threshold else Label.NORMAL

    # -- serialization --

    def to_dict(self) -> dict:
        memory = self.scorer.memory()
        if self.scaler_mean is not None:
            memory = {**memory, "scaler": {"mean": self.scaler_mean.tolist(), "std": self.scaler_std.tolist()}}
        return {
            "kind": self.kind.value,
            "hyperparams": self.hyperparams,
            "threshold": self.threshold,
            "feature_names": list(self.feature_names),
            "memory": memory,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, d: Mapping) -> "DetectorModel":
        kind = DetectorKind.parse(d["kind"])
        hyperparams = dict(d["hyperparams"])
        scorer = _make_scorer(kind, hyperparams)
        memory = dict(d["memory"])
        scaler = memory.pop("scaler", None)
        scorer.load_memory(memory)
        return cls(
            kind,
            hyperparams,
            tuple(d["feature_names"]),
            scorer,
            float(d["threshold"]),
            None if scaler is None else np.asarray(scaler["mean"], dtype=float),
            None if scaler is None else np.asarray(scaler["std"], dtype=float),
        )

    @classmethod
    def load(cls, path: str | Path) -> "DetectorModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def resolve_hyperparams(kind: DetectorKind, hyperparams: Mapping[str, Any] | None) -> dict[str, Any]:
    merged = dict(DEFAULT_HYPERPARAMS[kind])
    for key, value in (hyperparams or {}).items():
        if key not in merged:
            raise DetectorError(f"unknown hyperparameter {key!r} for {kind.value}")
        merged[key] = value
    return merged


def fit(
    dataset: LabeledDataset,
    kind: "DetectorKind | str" = DetectorKind.RANDOM_FOREST,
    hyperparams: Mapping[str, Any] | None = None,
    seed: int = 0,
) -> DetectorModel:
    """Train a detector; deterministic in ``seed``.  The threshold starts at 0.5."""
    kind = DetectorKind.parse(kind)
    params = resolve_hyperparams(kind, hyperparams)
    counts = dataset.class_counts()
    if counts["Normal"] == 0 or counts["Abnormal"] == 0:
        raise DetectorError("training data must contain both Normal and Abnormal samples")
    scorer = _make_scorer(kind, params)
    X = dataset.features
    mean = std = None
    if kind in SCALED_KINDS:
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        X = (X - mean) / std
    try:
        scorer.fit(X, dataset.labels, seed=seed)
    except ValueError as exc:
        raise DetectorError(str(exc)) from exc
    return DetectorModel(kind, params, dataset.feature_names, scorer, DEFAULT_THRESHOLD, mean, std)


def score(model: DetectorModel, x) -> float:
    return model.score(x)


def classify(model: DetectorModel, x) -> Label:
    return model.classify(x)
