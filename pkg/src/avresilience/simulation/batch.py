"""Speed x interval grids of tamper trials plus attack-free control trials."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..integrity import SchedulePolicy
from .engine import run_scenario
from .scenario import Attack, Scenario, ScenarioError, Vehicle
from .store import ARTIFACT_IDS

CSV_HEADER = ("speed", "interval", "success_rate", "mean_latency", "max_latency")


@dataclass(frozen=True)
class CellResult:
    speed: float
    interval: float
    trials: int
    successes: int
    mean_latency: float | None
    max_latency: float | None
    control_trials: int
    false_detections: int
    control_restores: int

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials

    def to_dict(self) -> dict:
        return {
            "speed": self.speed,
            "interval": self.interval,
            "trials": self.trials,
            "successes": self.successes,
            "success_rate": self.success_rate,
            "mean_latency": self.mean_latency,
            "max_latency": self.max_latency,
            "control_trials": self.control_trials,
            "false_detections": self.false_detections,
            "control_restores": self.control_restores,
        }


@dataclass(frozen=True)
class BatchResult:
    cells: tuple[CellResult, ...]

    def cell(self, speed: float, interval: float) -> CellResult:
        for c in self.cells:
            if c.speed == speed and c.interval == interval:
                return c
        raise KeyError((speed, interval))

    def to_csv(self) -> str:
        def fmt(x):
            return "" if x is None else f"{x:.6f}"

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for c in self.cells:
            w.writerow([f"{c.speed:g}", f"{c.interval:g}", fmt(c.success_rate), fmt(c.mean_latency), fmt(c.max_latency)])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"cells": [c.to_dict() for c in self.cells]}, sort_keys=True, indent=2) + "\n"


def _trial_scenario(rng: np.random.Generator, speed: float, interval: float, duration: float,
                    stop_sign_time: float | None, tampers: int) -> Scenario:
    latest = duration - 2 * interval - 1.0
    if latest <= 1.0:
        raise ScenarioError(f"duration {duration} too short for interval {interval}")
    attacks = []
    for _ in range(tampers):
        onset = round(float(rng.uniform(1.0, latest)), 3)
        attacks.append(Attack.tamper(onset, str(rng.choice(ARTIFACT_IDS))))
    return Scenario(
        duration=duration,
        vehicle=Vehicle(speed, stop_sign_time),
        attacks=tuple(sorted(attacks, key=lambda a: a.onset)),
        schedule=SchedulePolicy.fixed(interval),
        seed=int(rng.integers(2**31)),
    )


def batch_run(
    speeds: Sequence[float],
    intervals: Sequence[float],
    trials_per_cell: int = 5,
    seed: int = 0,
    controls: int = 1,
    duration: float = 30.0,
    stop_sign_time: float | None = None,
) -> BatchResult:
    """Run ``trials_per_cell`` single-tamper trials and ``controls`` clean trials per cell.

    A trial succeeds when every injected tamper is detected.  Cells are seeded
    from ``seed`` and their grid position, so results do not depend on run order.
    """
    if not speeds or not intervals:
        raise ScenarioError("empty grid")
    if trials_per_cell < 1:
        raise ScenarioError("trials_per_cell must be >= 1")
    cells = []
    root = np.random.SeedSequence(seed)
    for i, speed in enumerate(speeds):
        for j, interval in enumerate(intervals):
            rng = np.random.default_rng(np.random.SeedSequence(root.entropy, spawn_key=(i, j)))
            successes, latencies = 0, []
            for _ in range(trials_per_cell):
                report = run_scenario(_trial_scenario(rng, speed, interval, duration, stop_sign_time, 1))
                successes += all(a.detected for a in report.attacks)
                latencies += [lat["detection"] for lat in report.latencies if lat["detection"] is not None]
            false_det = restores = 0
            for _ in range(controls):
                report = run_scenario(_trial_scenario(rng, speed, interval, duration, stop_sign_time, 0))
                false_det += len(report.events("Detection"))
                restores += len(report.events("RestoreComplete"))
            cells.append(
                CellResult(
                    float(speed),
                    float(interval),
                    trials_per_cell,
                    successes,
                    float(np.mean(latencies)) if latencies else None,
                    float(np.max(latencies)) if latencies else None,
                    controls,
                    false_det,
                    restores,
                )
            )
    return BatchResult(tuple(cells))
