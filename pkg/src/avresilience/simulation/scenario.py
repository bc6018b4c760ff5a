"""Scenario description: vehicle, attacks, integrity schedule, optional detector."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from ..integrity import TRIGGERS, SchedulePolicy
from .store import ARTIFACT_IDS, DEFAULT_MUTATION, MUTATIONS


class ScenarioError(ValueError):
    pass


class AttackKind(str, enum.Enum):
    TAMPER = "tamper"
    BLINDING = "blinding"


@dataclass(frozen=True)
class Attack:
    """A tamper (``onset``, artifact, mutation) or a blinding window ``[onset, end)``."""

    kind: AttackKind
    onset: float
    end: float | None = None
    artifact_id: str | None = None
    mutation: str | None = None
    trigger: str | None = None  # event-driven check announced with the tamper

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", AttackKind(self.kind))
        if self.kind is AttackKind.TAMPER:
            if self.artifact_id not in ARTIFACT_IDS:
                raise ScenarioError(f"tamper target {self.artifact_id!r} is not in the artifact manifest")
            if self.mutation is None:
                object.__setattr__(self, "mutation", DEFAULT_MUTATION[self.artifact_id])
            if self.mutation not in MUTATIONS:
                raise ScenarioError(f"unknown mutation {self.mutation!r}")
            if self.trigger is not None and self.trigger not in TRIGGERS:
                raise ScenarioError(f"unknown trigger {self.trigger!r}")
        elif self.end is None or not self.end > self.onset:
            raise ScenarioError("blinding attack needs end > onset")

    @classmethod
    def tamper(cls, onset: float, artifact_id: str = "model_weights", mutation: str | None = None,
               trigger: str | None = None) -> "Attack":
        return cls(AttackKind.TAMPER, onset, None, artifact_id, mutation, trigger)

    @classmethod
    def blinding(cls, onset: float, end: float) -> "Attack":
        return cls(AttackKind.BLINDING, onset, end)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind.value, "onset": self.onset}
        if self.kind is AttackKind.TAMPER:
            d.update(artifact_id=self.artifact_id, mutation=self.mutation)
            if self.trigger:
                d["trigger"] = self.trigger
        else:
            d["end"] = self.end
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Attack":
        kind = AttackKind(d["kind"])
        if kind is AttackKind.TAMPER:
            return cls.tamper(float(d["onset"]), d.get("artifact_id", "model_weights"), d.get("mutation"),
                              d.get("trigger"))
        return cls.blinding(float(d["onset"]), float(d["end"]))


@dataclass(frozen=True)
class Vehicle:
    nominal_speed: float = 0.33
    stop_sign_time: float | None = None
    brake_time: float = 1.0

    def __post_init__(self) -> None:
        if self.nominal_speed <= 0 or self.brake_time <= 0:
            raise ScenarioError("nominal_speed and brake_time must be > 0")


@dataclass(frozen=True)
class DetectorConfig:
    """Anomaly detector trained on synthetic blinding telemetry at scenario start."""

    kind: str = "rf"
    hyperparams: Mapping[str, Any] = field(default_factory=lambda: {"n_trees": 25, "max_depth": 12})
    threshold: float = 0.5
    training_samples: int = 4000
    window: int = 10
    alert_debounce: int = 1
    model_path: str | None = None

    @classmethod
    def from_dict(cls, d: Mapping) -> "DetectorConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ScenarioError(f"unknown detector option(s): {', '.join(sorted(unknown))}")
        return cls(**known)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "hyperparams": dict(self.hyperparams),
            "threshold": self.threshold,
            "training_samples": self.training_samples,
            "window": self.window,
            "alert_debounce": self.alert_debounce,
            "model_path": self.model_path,
        }


@dataclass(frozen=True)
class Scenario:
    duration: float
    vehicle: Vehicle = Vehicle()
    sample_rate: float = 10.0
    attacks: tuple[Attack, ...] = ()
    schedule: SchedulePolicy = SchedulePolicy()
    detector: DetectorConfig | None = None
    seed: int = 0
    coordinator_enabled: bool = True
    auto_restore: bool = True
    wall_clock: bool = False
    with_fallback: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "attacks", tuple(self.attacks))
        if self.duration <= 0 or self.sample_rate <= 0:
            raise ScenarioError("duration and sample_rate must be > 0")
        for a in self.attacks:
            if not 0.0 <= a.onset <= self.duration:
                raise ScenarioError(f"attack onset {a.onset} outside [0, {self.duration}]")
            if a.end is not None and a.end > self.duration:
                raise ScenarioError(f"attack end {a.end} beyond duration {self.duration}")
        windows = sorted((a.onset, a.end) for a in self.attacks if a.kind is AttackKind.BLINDING)
        if any(b[0] < a[1] for a, b in zip(windows, windows[1:])):
            raise ScenarioError("blinding windows overlap")
        if windows and self.detector is None:
            raise ScenarioError("blinding attacks need a detector configuration")
        sign = self.vehicle.stop_sign_time
        if sign is not None and not self.vehicle.brake_time <= sign <= self.duration:
            raise ScenarioError("stop_sign_time must lie in [brake_time, duration]")

    def to_dict(self) -> dict:
        return {
            "duration": self.duration,
            "vehicle": {
                "nominal_speed": self.vehicle.nominal_speed,
                "stop_sign_time": self.vehicle.stop_sign_time,
                "brake_time": self.vehicle.brake_time,
            },
            "sample_rate": self.sample_rate,
            "attacks": [a.to_dict() for a in self.attacks],
            "schedule": self.schedule.to_dict(),
            "detector": self.detector.to_dict() if self.detector else None,
            "seed": self.seed,
            "coordinator_enabled": self.coordinator_enabled,
            "auto_restore": self.auto_restore,
            "wall_clock": self.wall_clock,
            "with_fallback": self.with_fallback,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scenario":
        try:
            return cls(
                duration=float(d["duration"]),
                vehicle=Vehicle(**d.get("vehicle", {})),
                sample_rate=float(d.get("sample_rate", 10.0)),
                attacks=tuple(Attack.from_dict(a) for a in d.get("attacks", [])),
                schedule=SchedulePolicy.from_dict(d.get("schedule", {})),
                detector=DetectorConfig.from_dict(d["detector"]) if d.get("detector") else None,
                seed=int(d.get("seed", 0)),
                coordinator_enabled=bool(d.get("coordinator_enabled", True)),
                auto_restore=bool(d.get("auto_restore", True)),
                wall_clock=bool(d.get("wall_clock", False)),
                with_fallback=bool(d.get("with_fallback", True)),
            )
        except (KeyError, TypeError) as exc:
            raise ScenarioError(f"malformed scenario: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc


def stop_sign_scenario(coordinator_enabled: bool = True, auto_restore: bool = False) -> Scenario:
    """Tamper at 10 s, stop sign at 20 s, 0.33 m/s cruise, 1 s integrity interval."""
    return Scenario(
        duration=30.0,
        vehicle=Vehicle(0.33, 20.0),
        attacks=(Attack.tamper(10.0, "model_weights"),),
        schedule=SchedulePolicy.fixed(1.0),
        coordinator_enabled=coordinator_enabled,
        auto_restore=auto_restore,
    )
