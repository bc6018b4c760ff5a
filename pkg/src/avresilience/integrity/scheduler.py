"""When to validate: fixed interval, staggered per-artifact offsets, or explicit triggers."""
from __future__ import annotations

import enum
import queue
import threading
from dataclasses import dataclass, field
from typing import Iterator, Mapping

from ..clock import ClockError
from .guard import ArtifactManifest, TrustedBaseline, ValidationEvent, validate_once

TRIGGERS = frozenset({"on-update", "on-restart", "on-checkpoint"})


class SchedulerError(RuntimeError):
    pass


class ScheduleMode(str, enum.Enum):
    FIXED = "fixed"
    STAGGERED = "staggered"
    EVENT = "event"


@dataclass(frozen=True)
class SchedulePolicy:
    mode: ScheduleMode = ScheduleMode.FIXED
    interval: float = 1.0
    offsets: Mapping[str, float] | None = None
    triggers: frozenset[str] = field(default_factory=lambda: TRIGGERS)

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", ScheduleMode(self.mode))
        object.__setattr__(self, "triggers", frozenset(self.triggers))
        if not self.interval > 0:
            raise SchedulerError("interval must be > 0")
        unknown = self.triggers - TRIGGERS
        if unknown:
            raise SchedulerError(f"unknown trigger(s): {', '.join(sorted(unknown))}")
        for aid, off in (self.offsets or {}).items():
            if not 0.0 <= off < self.interval:
                raise SchedulerError(f"offset for {aid!r} must lie in [0, interval)")

    @classmethod
    def fixed(cls, interval: float) -> "SchedulePolicy":
        return cls(ScheduleMode.FIXED, interval)

    @classmethod
    def staggered(cls, interval: float, offsets: Mapping[str, float] | None = None) -> "SchedulePolicy":
        return cls(ScheduleMode.STAGGERED, interval, dict(offsets) if offsets else None)

    @classmethod
    def event_driven(cls, triggers=TRIGGERS) -> "SchedulePolicy":
        return cls(ScheduleMode.EVENT, 1.0, None, frozenset(triggers))

    def resolved_offsets(self, ids: tuple[str, ...]) -> dict[str, float]:
        if self.mode is ScheduleMode.FIXED:
            return {aid: 0.0 for aid in ids}
        if self.offsets is not None:
            missing = [aid for aid in ids if aid not in self.offsets]
            if missing:
                raise SchedulerError(f"no offset for: {', '.join(missing)}")
            return {aid: float(self.offsets[aid]) for aid in ids}
        return {aid: self.interval * i / len(ids) for i, aid in enumerate(ids)}

    def to_dict(self) -> dict:
        d = {"mode": self.mode.value, "interval": self.interval, "triggers": sorted(self.triggers)}
        if self.offsets is not None:
            d["offsets"] = dict(self.offsets)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SchedulePolicy":
        return cls(
            ScheduleMode(d.get("mode", "fixed")),
            float(d.get("interval", 1.0)),
            d.get("offsets"),
            frozenset(d.get("triggers", TRIGGERS)),
        )


class IntegrityScheduler:
    """Computes due checks and runs them; emitted events are strictly time ordered.

    Artifact ``a`` with offset ``o`` is checked at ``t0 + o + n * interval`` for
    every ``n`` that puts the check strictly after ``t0``.  Artifacts due at the
    same instant are checked together in one event.
    """

    def __init__(
        self,
        manifest: ArtifactManifest,
        baseline: TrustedBaseline,
        policy: SchedulePolicy,
        t0: float = 0.0,
    ):
        self.manifest = manifest
        self.baseline = baseline
        self.policy = policy
        self.t0 = t0
        self.last_time: float | None = None
        self._offsets = policy.resolved_offsets(manifest.ids)
        self._n = {aid: (0 if off > 0 else 1) for aid, off in self._offsets.items()}

    def _due_time(self, aid: str) -> float:
        return self.t0 + self._offsets[aid] + self._n[aid] * self.policy.interval

    def next_due(self) -> tuple[float, tuple[str, ...]] | None:
        if self.policy.mode is ScheduleMode.EVENT or not self._offsets:
            return None
        times = {aid: self._due_time(aid) for aid in self._offsets}
        t = min(times.values())
        return t, tuple(aid for aid in self.manifest.ids if times[aid] == t)

    def _emit(self, t: float, ids: tuple[str, ...], trigger: str) -> ValidationEvent:
        if self.last_time is not None and t <= self.last_time:
            raise SchedulerError(f"validation at {t} is not after previous event at {self.last_time}")
        self.last_time = t
        return validate_once(self.manifest, self.baseline, at=t, artifact_ids=ids, trigger=trigger)

    def run_due(self, t: float, trigger: str | None = None) -> ValidationEvent:
        """Run the check scheduled at ``t`` (which must be the next due time).

        With ``trigger`` the check widens to every artifact: a trigger landing on
        a tick is folded into it.
        """
        due = self.next_due()
        if due is None or due[0] != t:
            raise SchedulerError(f"no check scheduled at {t}")
        _, ids = due
        for aid in ids:
            self._n[aid] += 1
        if trigger is not None:
            return self._emit(t, self.manifest.ids, trigger)
        return self._emit(t, ids, self.policy.mode.value)

    def trigger(self, kind: str, t: float) -> ValidationEvent | None:
        """Validate every artifact now because of an external trigger.

        Returns ``None`` when the trigger coincides with the previous event time
        (the check it asks for has just been made).
        """
        if kind not in self.policy.triggers:
            raise SchedulerError(f"trigger {kind!r} not enabled by policy")
        if self.last_time is not None and t == self.last_time:
            return None
        return self._emit(t, self.manifest.ids, kind)


def run_scheduler(
    manifest: ArtifactManifest,
    baseline: TrustedBaseline,
    policy: SchedulePolicy,
    clock,
    until: float,
    stop: threading.Event | None = None,
    triggers: list[tuple[float, str]] | None = None,
) -> Iterator[ValidationEvent]:
    """Yield validation events in time order up to ``until`` (inclusive).

    ``triggers`` are ``(time, kind)`` pairs fed to event-driven checks.  The clock
    is slept to each event time; a clock that reads earlier than a previous
    reading aborts the run with :class:`SchedulerError`.
    """
    sched = IntegrityScheduler(manifest, baseline, policy, t0=clock.now())
    pending = sorted(triggers or [])
    last_reading = clock.now()
    while stop is None or not stop.is_set():
        due = sched.next_due()
        t_tick = due[0] if due is not None else float("inf")
        t_trig = pending[0][0] if pending else float("inf")
        t_next = min(t_tick, t_trig)
        if t_next > until:
            return
        try:
            clock.sleep_until(t_next)
        except ClockError as exc:
            raise SchedulerError(str(exc)) from exc
        reading = clock.now()
        if reading < last_reading:
            raise SchedulerError(f"clock went backwards: {reading} < {last_reading}")
        last_reading = reading
        if t_tick < t_trig:
            yield sched.run_due(t_tick)
        elif t_tick == t_trig:
            _, kind = pending.pop(0)
            yield sched.run_due(t_tick, trigger=kind)
        else:
            _, kind = pending.pop(0)
            event = sched.trigger(kind, t_trig)
            if event is not None:
                yield event


class ValidationWorker(threading.Thread):
    """Runs a wall-clock schedule on a background thread.

    Events are put on ``events`` (a FIFO queue: ordered and lossless); ``None``
    marks the end of the stream.  :meth:`trigger` requests an event-driven check.
    """

    def __init__(self, manifest, baseline, policy, clock, until: float):
        super().__init__(daemon=True)
        self.events: queue.Queue = queue.Queue()
        self.stop_event = threading.Event()
        self._manifest, self._baseline, self._policy = manifest, baseline, policy
        self._clock, self._until = clock, until
        self._requests: queue.Queue = queue.Queue()
        self.error: BaseException | None = None

    def trigger(self, kind: str) -> None:
        self._requests.put(kind)

    def stop(self) -> None:
        self.stop_event.set()
        self._requests.put(None)

    def _drain_due(self, sched: IntegrityScheduler) -> None:
        due = sched.next_due()
        while due is not None and self._clock.now() >= due[0]:
            self.events.put(sched.run_due(due[0]))
            due = sched.next_due()

    def run(self) -> None:
        try:
            sched = IntegrityScheduler(self._manifest, self._baseline, self._policy, t0=self._clock.now())
            while not self.stop_event.is_set():
                if self._clock.now() > self._until:
                    break
                self._drain_due(sched)
                due = sched.next_due()
                wait_until = min(due[0] if due else self._until, self._until)
                try:
                    kind = self._requests.get(timeout=max(0.0, wait_until - self._clock.now()))
                except queue.Empty:
                    continue
                if kind is None:
                    continue
                self._drain_due(sched)
                event = sched.trigger(kind, self._clock.now())
                if event is not None:
                    self.events.put(event)
        except BaseException as exc:  # surfaced to the consumer via .error
            self.error = exc
        finally:
            self.events.put(None)
