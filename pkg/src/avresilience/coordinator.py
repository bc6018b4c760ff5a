"""Cross-layer coordinator: primary/fallback switchover, shuffling and a safety audit.

The state machine is a pure function :func:`on_event` over immutable
:class:`CoordinatorState` values.  A compromise signal (integrity mismatch or
anomaly alert) moves execution off the primary module at once; the primary is
re-activated only when every open cause has been cleared by its own kind of
signal (integrity by a matching digest, anomaly by an anomaly-cleared event).
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np


class CoordinatorError(RuntimeError):
    pass


class OutOfOrderEvent(CoordinatorError):
    pass


class EventKind(str, enum.Enum):
    INTEGRITY_MISMATCH = "IntegrityMismatch"
    INTEGRITY_MATCH = "IntegrityMatch"
    ANOMALY_ALERT = "AnomalyAlert"
    ANOMALY_CLEARED = "AnomalyCleared"


class Source(str, enum.Enum):
    INTEGRITY = "integrity-guard"
    ANOMALY = "anomaly-ids"


_SOURCE = {
    EventKind.INTEGRITY_MISMATCH: Source.INTEGRITY,
    EventKind.INTEGRITY_MATCH: Source.INTEGRITY,
    EventKind.ANOMALY_ALERT: Source.ANOMALY,
    EventKind.ANOMALY_CLEARED: Source.ANOMALY,
}


@dataclass(frozen=True)
class CoordinatorEvent:
    """A detector signal.  For ``IntegrityMatch`` an empty ``artifacts`` means all."""

    kind: EventKind
    time: float
    event_id: int = -1
    artifacts: tuple[str, ...] = ()
    score: float | None = None
    threshold: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", EventKind(self.kind))
        object.__setattr__(self, "artifacts", tuple(self.artifacts))
        if self.kind is EventKind.INTEGRITY_MISMATCH and not self.artifacts:
            raise CoordinatorError("IntegrityMismatch must name at least one artifact")
        if self.kind is EventKind.ANOMALY_ALERT:
            if self.score is None or self.threshold is None or not self.score > self.threshold:
                raise CoordinatorError("AnomalyAlert requires score > threshold")

    @property
    def source(self) -> Source:
        return _SOURCE[self.kind]

    @classmethod
    def mismatch(cls, time: float, artifacts: Iterable[str], event_id: int = -1) -> "CoordinatorEvent":
        return cls(EventKind.INTEGRITY_MISMATCH, time, event_id, tuple(artifacts))

    @classmethod
    def match(cls, time: float, artifacts: Iterable[str] = (), event_id: int = -1) -> "CoordinatorEvent":
        return cls(EventKind.INTEGRITY_MATCH, time, event_id, tuple(artifacts))

    @classmethod
    def alert(cls, time: float, score: float, threshold: float, event_id: int = -1) -> "CoordinatorEvent":
        return cls(EventKind.ANOMALY_ALERT, time, event_id, (), score, threshold)

    @classmethod
    def cleared(cls, time: float, event_id: int = -1) -> "CoordinatorEvent":
        return cls(EventKind.ANOMALY_CLEARED, time, event_id)

    def ref(self) -> dict:
        return {"event_id": self.event_id, "kind": self.kind.value, "time": self.time}

    def to_dict(self) -> dict:
        d = {**self.ref(), "source": self.source.value, "artifacts": list(self.artifacts)}
        if self.kind is EventKind.ANOMALY_ALERT:
            d.update(score=self.score, threshold=self.threshold)
        return d


@dataclass(frozen=True)
class ModuleDescriptor:
    module_id: str
    variant_tag: str = ""
    verified: bool = True


@dataclass(frozen=True)
class ModuleRegistry:
    primary: ModuleDescriptor
    fallbacks: tuple[ModuleDescriptor, ...]
    active_id: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "fallbacks", tuple(self.fallbacks))
        ids = [m.module_id for m in self.modules]
        if len(set(ids)) != len(ids):
            raise CoordinatorError("module ids must be unique")
        if self.active_id not in ids:
            raise CoordinatorError(f"active module {self.active_id!r} is not registered")

    @property
    def modules(self) -> tuple[ModuleDescriptor, ...]:
        return (self.primary,) + self.fallbacks

    def get(self, module_id: str) -> ModuleDescriptor:
        for m in self.modules:
            if m.module_id == module_id:
                return m
        raise KeyError(module_id)

    def first_verified_fallback(self) -> ModuleDescriptor | None:
        return next((m for m in self.fallbacks if m.verified), None)

    @classmethod
    def simple(cls, primary: str = "primary", fallbacks: Sequence[str] = ("fallback",)) -> "ModuleRegistry":
        return cls(
            ModuleDescriptor(primary, "v0"),
            tuple(ModuleDescriptor(f, f"v{i + 1}") for i, f in enumerate(fallbacks)),
            primary,
        )


class Mode(str, enum.Enum):
    NORMAL_OP = "NormalOp"
    FALLBACK_ACTIVE = "FallbackActive"
    SAFE_STOP = "SafeStop"


class ActionKind(str, enum.Enum):
    SWITCH_TO_FALLBACK = "SwitchToFallback"
    RESTORE_REQUESTED = "RestoreRequested"
    SWITCH_TO_PRIMARY = "SwitchToPrimary"
    SHUFFLE = "Shuffle"
    SAFE_STOP = "SafeStop"


@dataclass(frozen=True)
class Action:
    time: float
    kind: ActionKind
    trigger: Mapping | None
    target: str | None = None
    artifacts: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "action": self.kind.value,
            "target": self.target,
            "artifacts": list(self.artifacts),
            "trigger": dict(self.trigger) if self.trigger else None,
        }


@dataclass(frozen=True)
class CoordinatorState:
    registry: ModuleRegistry
    mode: Mode = Mode.NORMAL_OP
    causes: Mapping[Source, CoordinatorEvent] = field(default_factory=dict)
    unresolved_artifacts: frozenset[str] = frozenset()
    last_time: float | None = None
    alert_streak: int = 0
    alert_debounce: int = 1
    last_event_per_source: Mapping[Source, CoordinatorEvent] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.alert_debounce < 1:
            raise CoordinatorError("alert_debounce must be >= 1")

    @classmethod
    def initial(cls, registry: ModuleRegistry, alert_debounce: int = 1) -> "CoordinatorState":
        if registry.active_id != registry.primary.module_id:
            registry = replace(registry, active_id=registry.primary.module_id)
        return cls(registry, alert_debounce=alert_debounce)

    @property
    def active_id(self) -> str:
        return self.registry.active_id

    @property
    def compromised(self) -> bool:
        return bool(self.causes)

    def snapshot(self) -> dict:
        return {
            "mode": self.mode.value,
            "active_id": self.active_id,
            "causes": {s.value: e.ref() for s, e in sorted(self.causes.items())},
            "unresolved_artifacts": sorted(self.unresolved_artifacts),
        }


def _activate_fallback(state: CoordinatorState, event: CoordinatorEvent) -> tuple[CoordinatorState, list[Action]]:
    fb = state.registry.first_verified_fallback()
    if fb is None:
        return replace(state, mode=Mode.SAFE_STOP), [Action(event.time, ActionKind.SAFE_STOP, event.ref())]
    registry = replace(state.registry, active_id=fb.module_id)
    action = Action(event.time, ActionKind.SWITCH_TO_FALLBACK, event.ref(), target=fb.module_id)
    return replace(state, mode=Mode.FALLBACK_ACTIVE, registry=registry), [action]


def _maybe_release(state: CoordinatorState, event: CoordinatorEvent) -> tuple[CoordinatorState, list[Action]]:
    if state.mode is Mode.FALLBACK_ACTIVE and not state.causes:
        primary = state.registry.primary.module_id
        registry = replace(state.registry, active_id=primary)
        action = Action(event.time, ActionKind.SWITCH_TO_PRIMARY, event.ref(), target=primary)
        return replace(state, mode=Mode.NORMAL_OP, registry=registry), [action]
    return state, []


def on_event(state: CoordinatorState, event: CoordinatorEvent) -> tuple[CoordinatorState, list[Action]]:
    """Apply one detector signal; returns the new state and the actions it caused."""
    if state.last_time is not None and event.time < state.last_time:
        raise OutOfOrderEvent(f"event at {event.time} is older than last processed {state.last_time}")
    last = dict(state.last_event_per_source)
    last[event.source] = event
    state = replace(state, last_time=event.time, last_event_per_source=last)
    causes = dict(state.causes)
    actions: list[Action] = []

    if event.kind is EventKind.INTEGRITY_MISMATCH:
        fresh = tuple(a for a in event.artifacts if a not in state.unresolved_artifacts)
        if not fresh:
            return state, []
        was_clean = not causes
        causes.setdefault(Source.INTEGRITY, event)
        state = replace(state, causes=causes, unresolved_artifacts=state.unresolved_artifacts | set(fresh))
        if was_clean and state.mode is Mode.NORMAL_OP:
            state, actions = _activate_fallback(state, event)
        actions.append(Action(event.time, ActionKind.RESTORE_REQUESTED, event.ref(), artifacts=fresh))
        return state, actions

    if event.kind is EventKind.INTEGRITY_MATCH:
        if Source.INTEGRITY not in causes:
            return state, []
        verified = set(event.artifacts) if event.artifacts else set(state.unresolved_artifacts)
        remaining = state.unresolved_artifacts - verified
        if remaining == state.unresolved_artifacts:
            return state, []
        if not remaining:
            del causes[Source.INTEGRITY]
        state = replace(state, causes=causes, unresolved_artifacts=frozenset(remaining))
        return _maybe_release(state, event)

    if event.kind is EventKind.ANOMALY_ALERT:
        streak = state.alert_streak + 1
        state = replace(state, alert_streak=streak)
        if Source.ANOMALY in causes or streak < state.alert_debounce:
            return state, []
        was_clean = not causes
        causes[Source.ANOMALY] = event
        state = replace(state, causes=causes)
        if was_clean and state.mode is Mode.NORMAL_OP:
            return _activate_fallback(state, event)
        return state, []

    # AnomalyCleared
    state = replace(state, alert_streak=0)
    if Source.ANOMALY not in causes:
        return state, []
    del causes[Source.ANOMALY]
    state = replace(state, causes=causes)
    return _maybe_release(state, event)


# -- shuffle --------------------------------------------------------------------


class ShufflePolicy(str, enum.Enum):
    ROTATE_VARIANT = "rotate_variant"
    RERANDOMIZE_OFFSETS = "rerandomize_offsets"


@dataclass(frozen=True)
class ShuffleResult:
    registry: ModuleRegistry
    offsets: Mapping[str, float] | None = None


def shuffle(
    registry: ModuleRegistry,
    seed: int,
    policy: ShufflePolicy | str = ShufflePolicy.ROTATE_VARIANT,
    interval: float = 1.0,
    artifact_ids: Sequence[str] = (),
) -> ShuffleResult:
    """Reconfigure without changing the set of registered modules.

    ``rotate_variant`` promotes a different verified variant to primary (and makes
    it active); ``rerandomize_offsets`` draws fresh distinct staggered offsets in
    ``[0, interval)`` for ``artifact_ids``.
    """
    policy = ShufflePolicy(policy)
    rng = np.random.default_rng(seed)
    if policy is ShufflePolicy.RERANDOMIZE_OFFSETS:
        if interval <= 0:
            raise CoordinatorError("interval must be > 0")
        while True:
            draws = rng.uniform(0.0, interval, len(artifact_ids))
            if len(set(draws.tolist())) == len(draws):
                break
        return ShuffleResult(registry, {aid: float(o) for aid, o in zip(artifact_ids, draws)})

    verified = [m for m in registry.modules if m.verified]
    if len(verified) < 2:
        raise CoordinatorError("rotate_variant needs at least two verified variants")
    choices = [m for m in verified if m.module_id != registry.primary.module_id]
    new_primary = choices[int(rng.integers(len(choices)))]
    rest = tuple(m for m in registry.modules if m.module_id != new_primary.module_id)
    return ShuffleResult(ModuleRegistry(new_primary, rest, new_primary.module_id))


# -- stateful wrapper -----------------------------------------------------------


class ActionLog(list):
    """Actions in processing order; times never decrease."""

    def to_ndjson(self) -> str:
        return "".join(json.dumps(a.to_dict(), sort_keys=True) + "\n" for a in self)


class Coordinator:
    """Single-writer holder of the current state, the action log and received events."""

    def __init__(self, registry: ModuleRegistry, alert_debounce: int = 1):
        self.state = CoordinatorState.initial(registry, alert_debounce)
        self.log = ActionLog()
        self.history: list = []
        self._seq = 0

    def submit(self, event: CoordinatorEvent) -> list[Action]:
        if event.event_id < 0:
            event = replace(event, event_id=self._seq)
        self._seq = max(self._seq, event.event_id) + 1
        self.state, actions = on_event(self.state, event)
        self.history.append(event)
        self.log.extend(actions)
        return actions

    def step(self, time: float) -> "ProcessingStep":
        """Record that the active module processed one input at ``time``."""
        s = ProcessingStep(time, (self.state.active_id,))
        self.history.append(s)
        return s

    def shuffle(self, time: float, seed: int, policy=ShufflePolicy.ROTATE_VARIANT, **kw) -> ShuffleResult:
        if self.state.mode is not Mode.NORMAL_OP:
            raise CoordinatorError("shuffle is not allowed while a fallback episode is in progress")
        result = shuffle(self.state.registry, seed, policy, **kw)
        if result.registry is not self.state.registry:
            self.state = replace(self.state, registry=result.registry)
            self.log.append(
                Action(time, ActionKind.SHUFFLE, None, target=result.registry.active_id)
            )
        return result


# -- audit ------------------------------------------------------------------------


@dataclass(frozen=True)
class ProcessingStep:
    time: float
    active_ids: tuple[str, ...] | None = None


@dataclass(frozen=True)
class Violation:
    time: float
    active_id: str | None
    unresolved_event: Mapping | None
    reason: str = "compromised module active"

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "active_id": self.active_id,
            "unresolved_event": dict(self.unresolved_event) if self.unresolved_event else None,
            "reason": self.reason,
        }


@dataclass(frozen=True)
class SafetyReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json(self) -> str:
        return json.dumps({"violations": [v.to_dict() for v in self.violations]}, sort_keys=True)


class AuditError(CoordinatorError):
    pass


def audit(
    log: Sequence[Action],
    history: Sequence,
    initial_active: str,
    alert_debounce: int = 1,
) -> SafetyReport:
    """Replay the log against the event history and check every processing step.

    A step violates safety when it is not exactly one module, or when that module
    was the primary at the time of a compromise signal that is still unresolved.
    Steps without explicit ``active_ids`` are attributed to the module the log says
    was active.
    """
    seen_ids = {e.event_id for e in history if isinstance(e, CoordinatorEvent)}
    for a in log:
        if a.trigger is not None and a.trigger.get("event_id") not in seen_ids:
            raise AuditError(f"action {a.kind.value} at {a.time} refers to an event not in history")
    times = [a.time for a in log]
    if any(b < a for a, b in zip(times, times[1:])):
        raise AuditError("action log is not time ordered")

    active = initial_active
    primary = initial_active
    pending = list(log)
    integrity_open: dict[str, tuple[str, CoordinatorEvent]] = {}  # artifact -> (module, signal)
    anomaly_open: tuple[str, CoordinatorEvent] | None = None
    streak = 0
    violations = []

    def apply_until(t: float) -> None:
        nonlocal active, primary
        while pending and pending[0].time <= t:
            a = pending.pop(0)
            if a.kind in (ActionKind.SWITCH_TO_FALLBACK, ActionKind.SWITCH_TO_PRIMARY):
                active = a.target
            elif a.kind is ActionKind.SHUFFLE:
                active = primary = a.target

    for entry in history:
        if isinstance(entry, CoordinatorEvent):
            k = entry.kind
            if k is EventKind.INTEGRITY_MISMATCH:
                for art in entry.artifacts:
                    integrity_open.setdefault(art, (primary, entry))
            elif k is EventKind.INTEGRITY_MATCH:
                cleared = entry.artifacts or tuple(integrity_open)
                for art in cleared:
                    integrity_open.pop(art, None)
            elif k is EventKind.ANOMALY_ALERT:
                streak += 1
                if anomaly_open is None and streak >= alert_debounce:
                    anomaly_open = (primary, entry)
            else:
                streak = 0
                anomaly_open = None
            continue
        apply_until(entry.time)
        ids = entry.active_ids if entry.active_ids is not None else (active,)
        if len(ids) != 1:
            violations.append(Violation(entry.time, None, None, f"{len(ids)} modules active"))
            continue
        module = ids[0]
        open_signals = [ev for mod, ev in integrity_open.values() if mod == module]
        if anomaly_open is not None and anomaly_open[0] == module:
            open_signals.append(anomaly_open[1])
        if open_signals:
            first = min(open_signals, key=lambda e: (e.time, e.event_id))
            violations.append(Violation(entry.time, module, first.ref()))
    return SafetyReport(tuple(violations))
