"""Detection-margin analysis and threshold selection.

A band ``[lower, upper]`` is a range of candidate thresholds.  Its error counts are
worst case over any threshold inside it: a normal sample is at risk when its score
exceeds ``lower``, an attack sample when its score falls below ``upper``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..telemetry import LabeledDataset
from .model import DetectorModel

# the four bands tabulated for the blinding-attack detector
REFERENCE_BANDS: tuple[tuple[float, float], ...] = ((0.4, 0.5), (0.3, 0.5), (0.4, 0.6), (0.3, 0.6))


class MarginError(ValueError):
    pass


@dataclass(frozen=True)
class MarginRow:
    lower: float
    upper: float
    normal_misclassified: int
    attack_misclassified: int
    fp_rate: float
    fn_rate: float

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def midpoint(self) -> float:
        return (self.lower + self.upper) / 2.0

    def to_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "normal_misclassified": self.normal_misclassified,
            "attack_misclassified": self.attack_misclassified,
            "fp_rate": self.fp_rate,
            "fn_rate": self.fn_rate,
        }


@dataclass(frozen=True)
class MarginReport:
    rows: tuple[MarginRow, ...]
    n_normal: int
    n_attack: int

    def __len__(self) -> int:
        return len(self.rows)

    def to_dict(self) -> dict:
        return {"n_normal": self.n_normal, "n_attack": self.n_attack, "bands": [r.to_dict() for r in self.rows]}

    @classmethod
    def from_dict(cls, d: dict) -> "MarginReport":
        return cls(tuple(MarginRow(**r) for r in d["bands"]), int(d["n_normal"]), int(d["n_attack"]))


def _check_band(lower: float, upper: float) -> None:
    if not 0.0 <= lower <= upper <= 1.0:
        raise MarginError(f"invalid band [{lower}, {upper}]: need 0 <= lower <= upper <= 1")


def margin_rows(
    scores: np.ndarray, labels: np.ndarray, bands: Iterable[Sequence[float]]
) -> MarginReport:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    if scores.size == 0:
        raise MarginError("empty evaluation set")
    normal = np.sort(scores[~labels])
    attack = np.sort(scores[labels])
    rows = []
    for band in bands:
        lower, upper = float(band[0]), float(band[1])
        _check_band(lower, upper)
        n_fp = int(normal.size - np.searchsorted(normal, lower, side="right"))  # score > lower
        n_fn = int(np.searchsorted(attack, upper, side="left"))  # score < upper
        rows.append(
            MarginRow(
                lower,
                upper,
                n_fp,
                n_fn,
                n_fp / normal.size if normal.size else 0.0,
                n_fn / attack.size if attack.size else 0.0,
            )
        )
    return MarginReport(tuple(rows), int(normal.size), int(attack.size))


def margin_analysis(
    model: DetectorModel,
    eval_set: LabeledDataset,
    bands: Iterable[Sequence[float]] = REFERENCE_BANDS,
) -> MarginReport:
    if len(eval_set) == 0:
        raise MarginError("empty evaluation set")
    return margin_rows(model.scores(eval_set.features), eval_set.labels, bands)


def band_grid(step: float = 0.1) -> list[tuple[float, float]]:
    """Every band with both edges on a regular grid over [0, 1]."""
    edges = np.round(np.arange(0.0, 1.0 + step / 2, step), 10)
    return [(float(a), float(b)) for i, a in enumerate(edges) for b in edges[i:]]


def select_threshold(report: MarginReport, policy: str = "zero_fn_min_fp", target_fp: float | None = None) -> float:
    """Pick a threshold as the midpoint of the best band under ``policy``.

    ``zero_fn_min_fp``: among bands with no attack misclassified, lowest FP rate,
    then widest, then highest lower edge.  ``target_fp``: among bands with
    FP rate <= ``target_fp``, lowest FN rate, with the same tie-breaks.
    """
    if not report.rows:
        raise MarginError("margin report is empty")
    if policy == "zero_fn_min_fp":
        eligible = [r for r in report.rows if r.attack_misclassified == 0]
        key = lambda r: (r.fp_rate, -r.width, -r.lower)  # noqa: E731
    elif policy == "target_fp":
        if target_fp is None:
            raise MarginError("target_fp policy needs a target_fp value")
        eligible = [r for r in report.rows if r.fp_rate <= target_fp]
        key = lambda r: (r.fn_rate, -r.width, -r.lower)  # noqa: E731
    else:
        raise MarginError(f"unknown policy {policy!r}")
    if not eligible:
        raise MarginError("no band satisfies policy")
    return min(eligible, key=key).midpoint
