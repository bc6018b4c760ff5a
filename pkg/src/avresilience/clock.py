"""Time sources shared by the integrity scheduler and the scenario simulator."""
from __future__ import annotations

import time


class ClockError(RuntimeError):
    """A clock moved backwards."""


class VirtualClock:
    """Deterministic clock that only moves when told to.

    Processing is free except for modeled I/O: :meth:`charge_io` advances time by
    ``nbytes / io_bandwidth`` so restore durations are reproducible.
    """

    def __init__(self, start: float = 0.0, io_bandwidth: float = 100e6):
        self._now = float(start)
        self.io_bandwidth = io_bandwidth

    def now(self) -> float:
        return self._now

    def advance_to(self, t: float) -> float:
        if t < self._now:
            raise ClockError(f"virtual clock cannot move back from {self._now} to {t}")
        self._now = float(t)
        return self._now

    def advance(self, dt: float) -> float:
        return self.advance_to(self._now + dt)

    sleep_until = advance_to

    def charge_io(self, nbytes: int) -> None:
        self.advance(nbytes / self.io_bandwidth)


class WallClock:
    """Monotonic wall time in seconds since construction."""

    def __init__(self):
        self._t0 = time.monotonic()

    def now(self) -> float:
        return time.monotonic() - self._t0

    def sleep_until(self, t: float) -> float:
        delay = t - self.now()
        if delay > 0:
            time.sleep(delay)
        return self.now()

    def charge_io(self, nbytes: int) -> None:
        pass
