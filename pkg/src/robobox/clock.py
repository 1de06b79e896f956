"""Wall and virtual clocks.

Every long-running activity takes a clock so that scripted scenarios
and latency tests can run in milliseconds on a virtual timeline.
"""

from __future__ import annotations

import threading
import time


class Clock:
    def now(self) -> float:
        raise NotImplementedError

    def sleep(self, seconds: float) -> None:
        raise NotImplementedError


class WallClock(Clock):
    """Real time. ``sleep`` is interruptible via an optional stop event."""

    def __init__(self, stop_event: threading.Event | None = None):
        self._stop = stop_event

    def now(self) -> float:
        return time.time()

    def sleep(self, seconds: float) -> None:
        if seconds <= 0:
            return
        if self._stop is not None:
            self._stop.wait(seconds)
        else:
            time.sleep(seconds)


class ScaledClock(Clock):
    """Wall time compressed by a factor: a 10 s schedule at factor 5
    plays out in 2 real seconds while timestamps still span 10 s."""

    def __init__(self, factor: float, origin: float | None = None):
        self.factor = float(factor)
        self._real0 = time.time()
        self._origin = self._real0 if origin is None else float(origin)

    def now(self) -> float:
        return self._origin + (time.time() - self._real0) * self.factor

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds / self.factor)


class VirtualClock(Clock):
    """Manually advanced timeline; ``sleep`` returns instantly.

    Thread-safe, but deterministic runs should drive it from a single
    scheduler thread.
    """

    def __init__(self, start: float = 0.0):
        self._now = float(start)
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            return self._now

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            self.advance(seconds)

    def advance(self, seconds: float) -> float:
        with self._lock:
            self._now += float(seconds)
            return self._now

    def advance_to(self, when: float) -> float:
        with self._lock:
            if when > self._now:
                self._now = float(when)
            return self._now
