"""Closed-loop discrete-event simulation over a virtual clock.

Queue entries are ``(time, priority, seq)``.  At equal times integrity ticks run
before attack onsets, so a tamper landing exactly on a tick is caught by the next
one.  Anomaly verdicts and event-driven integrity triggers reach the coordinator
at the sample step after the one that produced them.
"""
from __future__ import annotations

import csv
import heapq
import io
import json
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from ..clock import VirtualClock
from ..coordinator import (
    ActionKind,
    Coordinator,
    CoordinatorEvent,
    EventKind,
    Mode,
    ModuleDescriptor,
    ModuleRegistry,
    audit,
)
from ..detection import DetectorModel, fit
from ..integrity import IntegrityScheduler, RestoreRefused, ValidationEvent, restore, validate_once
from ..telemetry import TraceConfig, extract_features, generate_trace, synthetic_blinding_dataset
from .scenario import AttackKind, Scenario
from .store import ArtifactStore, build_store, tamper

PRIMARY_ID = "perception-primary"
FALLBACK_ID = "perception-fallback"

# queue priorities at equal times
_TICK, _RESTORED, _ATTACK, _STEP, _DECIDE, _HALT = range(6)


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class TimelineEvent:
    time: float
    kind: str  # AttackOnset | AttackEnd | Detection | Switchover | RestoreComplete | StopSignHalt | SafeStop
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"time": self.time, "kind": self.kind, "detail": self.detail}


@dataclass
class AttackRecord:
    index: int
    kind: str
    onset: float
    end: float | None = None
    artifact_id: str | None = None
    detected_at: float | None = None
    switchover_at: float | None = None
    restored_at: float | None = None

    @property
    def detected(self) -> bool:
        return self.detected_at is not None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "kind": self.kind,
            "onset": self.onset,
            "end": self.end,
            "artifact_id": self.artifact_id,
            "detected": self.detected,
            "detection": self.detected_at,
            "switchover": self.switchover_at,
            "restore_complete": self.restored_at,
        }


@dataclass
class ScenarioReport:
    scenario: dict
    timeline: list[TimelineEvent]
    speed_profile: list[tuple[float, float]]
    attacks: list[AttackRecord]
    stop_sign_seen: bool | None
    halted_at: float | None
    safety_violations: int | None
    validations: int
    anomaly: dict | None = None
    escalations: list[dict] = field(default_factory=list)

    @property
    def latencies(self) -> list[dict]:
        return measure_latencies(self)

    def events(self, kind: str) -> list[TimelineEvent]:
        return [e for e in self.timeline if e.kind == kind]

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "timeline": [e.to_dict() for e in self.timeline],
            "attacks": [a.to_dict() for a in self.attacks],
            "latencies": self.latencies,
            "stop_sign_seen": self.stop_sign_seen,
            "halted_at": self.halted_at,
            "safety_violations": self.safety_violations,
            "validations": self.validations,
            "anomaly": self.anomaly,
            "escalations": self.escalations,
            "speed_profile": [list(p) for p in self.speed_profile],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def speed_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "speed"])
        for t, v in self.speed_profile:
            w.writerow([f"{t:.3f}", f"{v:.6f}"])
        return buf.getvalue()


def measure_latencies(report: ScenarioReport) -> list[dict]:
    """Per-attack detection, switchover and restore latencies; ``None`` when a stage never happened."""

    def diff(a, b):
        return None if a is None or b is None else b - a

    out = []
    for rec in report.attacks:
        out.append(
            {
                "index": rec.index,
                "kind": rec.kind,
                "detected": rec.detected,
                "detection": diff(rec.onset, rec.detected_at),
                "switchover": diff(rec.detected_at, rec.switchover_at),
                "restore": diff(rec.switchover_at, rec.restored_at),
            }
        )
    return out


class _Simulation:
    def __init__(self, scenario: Scenario, store: ArtifactStore):
        self.sc = scenario
        self.store = store
        self.rng = np.random.default_rng(scenario.seed)
        self.queue: list = []
        self._seq = 0
        self.timeline: list[TimelineEvent] = []
        self.records = [
            AttackRecord(i, a.kind.value, a.onset, a.end, a.artifact_id) for i, a in enumerate(scenario.attacks)
        ]
        self.open_integrity: set[str] = set()
        self.pending_triggers: list[str] = []
        self.pending_verdicts: list[CoordinatorEvent] = []
        self.alerting = False
        self.alert_streak = 0
        self.brake_start: float | None = None
        self.halted_at: float | None = None
        self.stop_sign_seen: bool | None = None
        self.validations = 0
        self.escalations: list[dict] = []
        self.n_steps = int(round(scenario.duration * scenario.sample_rate))

        fallbacks: tuple[ModuleDescriptor, ...] = ()
        if scenario.with_fallback:
            fallbacks = (ModuleDescriptor(FALLBACK_ID, "fallback", store.fallback_verified()),)
        self.registry = ModuleRegistry(ModuleDescriptor(PRIMARY_ID, "primary", True), fallbacks, PRIMARY_ID)
        debounce = scenario.detector.alert_debounce if scenario.detector else 1
        self.debounce = debounce
        self.coordinator = Coordinator(self.registry, debounce) if scenario.coordinator_enabled else None
        self.scheduler = IntegrityScheduler(store.manifest, store.baseline, scenario.schedule, t0=0.0)
        self.scores = self._anomaly_scores()

    # -- setup --------------------------------------------------------------

    def _anomaly_scores(self) -> np.ndarray | None:
        det = self.sc.detector
        if det is None:
            return None
        if det.model_path is not None:
            try:
                model = DetectorModel.load(det.model_path)
            except OSError as exc:
                raise SimulationError(f"detector untrained: cannot load {det.model_path}") from exc
        else:
            train = synthetic_blinding_dataset(
                det.training_samples, seed=self.sc.seed + 101, sample_rate=self.sc.sample_rate, window=det.window
            )
            model = fit(train, det.kind, det.hyperparams, seed=self.sc.seed)
        model = model.with_threshold(det.threshold)
        windows = tuple((a.onset, a.end) for a in self.sc.attacks if a.kind is AttackKind.BLINDING)
        trace = generate_trace(
            TraceConfig(self.sc.duration, self.sc.sample_rate, self.sc.vehicle.nominal_speed, windows),
            seed=self.sc.seed,
        )
        self.features = extract_features(trace, window=det.window)
        self.model = model
        return model.scores(self.features.features)

    def push(self, t: float, priority: int, kind: str, payload: Any = None) -> None:
        heapq.heappush(self.queue, (t, priority, self._seq, kind, payload))
        self._seq += 1

    def note(self, t: float, kind: str, **detail) -> None:
        self.timeline.append(TimelineEvent(t, kind, detail))

    @property
    def active_id(self) -> str:
        return self.coordinator.state.active_id if self.coordinator else PRIMARY_ID

    def _push_next_tick(self) -> None:
        due = self.scheduler.next_due()
        if due is not None and due[0] <= self.sc.duration:
            self.push(due[0], _TICK, "tick", due[0])

    # -- handlers -------------------------------------------------------------

    def on_validation(self, ev: ValidationEvent, t: float) -> None:
        self.validations += 1
        fresh = [a for a in ev.mismatched if a not in self.open_integrity]
        if fresh:
            self.note(t, "Detection", source="integrity-guard", artifacts=fresh, trigger=ev.trigger)
            self.open_integrity.update(fresh)
            for rec in self.records:
                if rec.kind == "tamper" and rec.artifact_id in fresh and rec.detected_at is None and rec.onset < t:
                    rec.detected_at = t
        self.open_integrity.difference_update(a for a in ev.checked if a not in ev.mismatched)
        if self.coordinator is not None:
            if ev.mismatched:
                self.submit(CoordinatorEvent.mismatch(t, ev.mismatched))
            else:
                self.submit(CoordinatorEvent.match(t, ev.checked))

    def submit(self, event: CoordinatorEvent) -> None:
        t = event.time
        for action in self.coordinator.submit(event):
            if action.kind is ActionKind.SWITCH_TO_FALLBACK:
                self.note(t, "Switchover", to=action.target, direction="fallback", cause=event.kind.value)
            elif action.kind is ActionKind.SWITCH_TO_PRIMARY:
                self.note(t, "Switchover", to=action.target, direction="primary", cause=event.kind.value)
            elif action.kind is ActionKind.SAFE_STOP:
                self.note(t, "SafeStop", cause=event.kind.value)
                self.brake(t)
            elif action.kind is ActionKind.RESTORE_REQUESTED and self.sc.auto_restore:
                self.request_restore(t, action.artifacts)
        if self.coordinator.state.active_id != PRIMARY_ID:
            for rec in self.records:
                if rec.detected_at is not None and rec.switchover_at is None:
                    rec.switchover_at = t

    def request_restore(self, t: float, artifacts: tuple[str, ...]) -> None:
        clock = None if self.sc.wall_clock else VirtualClock(start=t)
        try:
            outcome = restore(self.store.baseline, artifacts, clock=clock)
        except RestoreRefused as exc:
            self.escalations.append({"time": t, **exc.escalation})
            return
        self.push(t + outcome.duration, _RESTORED, "restored", (outcome.restored, outcome.duration))

    def on_restored(self, t: float, artifacts: tuple[str, ...], duration: float) -> None:
        self.note(t, "RestoreComplete", artifacts=list(artifacts), duration=duration)
        for rec in self.records:
            if rec.artifact_id in artifacts and rec.detected_at is not None and rec.restored_at is None:
                rec.restored_at = t
        self.on_validation(validate_once(self.store.manifest, self.store.baseline, at=t, trigger="post-restore"), t)

    def on_attack(self, t: float, index: int, edge: str) -> None:
        attack = self.sc.attacks[index]
        if edge == "end":
            self.note(t, "AttackEnd", index=index, attack=attack.kind.value)
            return
        detail = {"index": index, "attack": attack.kind.value}
        if attack.kind is AttackKind.TAMPER:
            tamper(self.store.path(attack.artifact_id), attack.mutation, self.rng)
            detail.update(artifact_id=attack.artifact_id, mutation=attack.mutation)
            if attack.trigger:
                self.pending_triggers.append(attack.trigger)
        self.note(t, "AttackOnset", **detail)

    def on_step(self, k: int, t: float) -> None:
        for kind in self.pending_triggers:
            ev = self.scheduler.trigger(kind, t)
            if ev is not None:
                self.on_validation(ev, t)
        self.pending_triggers.clear()
        for verdict in self.pending_verdicts:
            self.deliver_verdict(verdict, t)
        self.pending_verdicts.clear()
        if self.coordinator is not None and self.coordinator.state.mode is not Mode.SAFE_STOP:
            self.coordinator.step(t)
        if self.scores is not None and k < len(self.scores):
            s = float(self.scores[k])
            thr = self.model.threshold
            if s > thr:
                self.pending_verdicts.append(CoordinatorEvent.alert(t, s, thr))
            elif self.alerting:
                self.pending_verdicts.append(CoordinatorEvent.cleared(t))

    def deliver_verdict(self, verdict: CoordinatorEvent, t: float) -> None:
        verdict = replace(verdict, time=t)
        if verdict.kind is EventKind.ANOMALY_ALERT:
            self.alerting = True
            self.alert_streak += 1
            if self.alert_streak == self.debounce:
                self.note(t, "Detection", source="anomaly-ids", score=verdict.score)
                for rec in self.records:
                    if rec.kind == "blinding" and rec.detected_at is None and rec.onset < t <= rec.end + 2.0:
                        rec.detected_at = t
        else:
            self.alerting = False
            self.alert_streak = 0
        if self.coordinator is not None:
            self.submit(verdict)

    def on_decide(self, t: float) -> None:
        sign = self.sc.vehicle.stop_sign_time
        if self.brake_start is not None:
            return
        sees = self.active_id != PRIMARY_ID or self.store.primary_pristine()
        self.stop_sign_seen = sees
        if sees:
            self.brake(t)
            self.push(sign, _HALT, "halt")

    def brake(self, t: float) -> None:
        if self.brake_start is None:
            self.brake_start = t
            self.halted_at = t + self.sc.vehicle.brake_time

    def speed(self, t: float) -> float:
        v = self.sc.vehicle.nominal_speed
        if self.brake_start is None or t <= self.brake_start:
            return v
        return max(0.0, v * (1.0 - (t - self.brake_start) / self.sc.vehicle.brake_time))

    # -- main loop ----------------------------------------------------------------

    def run(self) -> ScenarioReport:
        rate = self.sc.sample_rate
        self._push_next_tick()
        for i, a in enumerate(self.sc.attacks):
            self.push(a.onset, _ATTACK, "attack", (i, "onset"))
            if a.end is not None:
                self.push(a.end, _ATTACK, "attack", (i, "end"))
        for k in range(self.n_steps + 1):
            self.push(k / rate, _STEP, "step", k)
        sign = self.sc.vehicle.stop_sign_time
        if sign is not None:
            self.push(sign - self.sc.vehicle.brake_time, _DECIDE, "decide")

        while self.queue:
            t, _, _, kind, payload = heapq.heappop(self.queue)
            if kind == "tick":
                self.on_validation(self.scheduler.run_due(payload), t)
                self._push_next_tick()
            elif kind == "restored":
                self.on_restored(t, *payload)
            elif kind == "attack":
                self.on_attack(t, *payload)
            elif kind == "step":
                self.on_step(payload, t)
            elif kind == "decide":
                self.on_decide(t)
            elif kind == "halt":
                self.note(t, "StopSignHalt")

        violations = None
        if self.coordinator is not None:
            violations = len(audit(self.coordinator.log, self.coordinator.history, PRIMARY_ID, self.debounce).violations)
        profile = [(k / rate, self.speed(k / rate)) for k in range(self.n_steps + 1)]
        return ScenarioReport(
            scenario=self.sc.to_dict(),
            timeline=self.timeline,
            speed_profile=profile,
            attacks=self.records,
            stop_sign_seen=self.stop_sign_seen,
            halted_at=self.halted_at,
            safety_violations=violations,
            validations=self.validations,
            anomaly=self._anomaly_summary(),
            escalations=self.escalations,
        )

    def _anomaly_summary(self) -> dict | None:
        if self.scores is None:
            return None
        inside = self.features.labels.astype(bool)
        summary: dict = {"threshold": self.model.threshold}
        summary["median_inside"] = float(np.median(self.scores[inside])) if inside.any() else None
        summary["median_outside"] = float(np.median(self.scores[~inside])) if (~inside).any() else None
        return summary


def run_scenario(scenario: Scenario, workdir: str | Path | None = None) -> ScenarioReport:
    """Run one scenario; the artifact store lives in ``workdir`` (a fresh temp dir if omitted).

    A ``workdir`` that already holds a store (``manifest.json`` present) is
    reused; otherwise fixtures are created there from the scenario seed.
    """
    if workdir is None:
        with tempfile.TemporaryDirectory(prefix="avr-sim-") as tmp:
            return _Simulation(scenario, build_store(tmp, scenario.seed)).run()
    workdir = Path(workdir)
    store = ArtifactStore.open(workdir) if (workdir / "manifest.json").exists() else build_store(workdir, scenario.seed)
    return _Simulation(scenario, store).run()
