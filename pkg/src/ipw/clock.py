"""Monotonic clocks.

Everything that measures time goes through a clock object so tests and replay
runs can substitute :class:`VirtualClock` and get bit-identical timings.
"""

from __future__ import annotations

import threading
import time
from typing import Callable, Protocol


class Clock(Protocol):
    def now_ns(self) -> int: ...

    def sleep(self, seconds: float) -> None: ...


class SystemClock:
    def now_ns(self) -> int:
        return time.monotonic_ns()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class VirtualClock:
    """Manually advanced clock. ``sleep`` advances time instead of blocking.

    Listeners are called with the new time after every advance; the sampler
    uses this to take its due readings in lockstep with simulated work.
    """

    def __init__(self, start_ns: int = 0):
        self._now = int(start_ns)
        self._listeners: list[Callable[[int], None]] = []
        self._lock = threading.Lock()

    def now_ns(self) -> int:
        return self._now

    def advance_ns(self, delta_ns: int) -> None:
        if delta_ns < 0:
            raise ValueError("virtual clock cannot move backwards")
        with self._lock:
            self._now += int(delta_ns)
            now = self._now
        for listener in list(self._listeners):
            listener(now)

    def sleep(self, seconds: float) -> None:
        self.advance_ns(round(seconds * 1e9))

    def subscribe(self, listener: Callable[[int], None]) -> None:
        self._listeners.append(listener)

    def unsubscribe(self, listener: Callable[[int], None]) -> None:
        if listener in self._listeners:
            self._listeners.remove(listener)
