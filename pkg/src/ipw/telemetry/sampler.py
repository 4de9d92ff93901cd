"""Fixed-cadence power sampling.

:func:`run_sampler` is the blocking real-time loop. :class:`Sampler` runs it on
a background thread, or, on a :class:`~ipw.clock.VirtualClock`, takes its due
readings synchronously whenever the clock advances.
"""

from __future__ import annotations

import logging
import threading

from ipw.clock import Clock, SystemClock, VirtualClock
from ipw.errors import IPWError, TelemetryError
from ipw.telemetry.backends import Backend, ReplayBackend, poll_backend
from ipw.telemetry.types import DEFAULT_INTERVAL_MS, PowerTrace, TraceAccumulator, aggregate_devices

log = logging.getLogger(__name__)


class _FixedClock:
    """Clock view pinned to a tick time, used when catching up virtual ticks."""

    def __init__(self, t_ns: int):
        self._t = t_ns

    def now_ns(self) -> int:
        return self._t

    def sleep(self, seconds: float) -> None:
        raise RuntimeError("fixed clock cannot sleep")


def _take(backend: Backend, clock, sink: TraceAccumulator) -> None:
    sink.append(aggregate_devices(poll_backend(backend, clock)))


def run_sampler(
    backend: Backend,
    interval_ms: float,
    sink: TraceAccumulator,
    stop: threading.Event,
    clock: Clock | None = None,
) -> PowerTrace:
    """Poll ``backend`` every ``interval_ms`` until ``stop`` is set.

    The first reading is taken one interval after the call. Timestamps are
    whatever the backend reports at poll time; late ticks are not back-dated.
    A backend failure closes the trace with an error marker.
    """
    if interval_ms <= 0:
        raise ValueError("interval_ms must be positive")
    clock = clock or SystemClock()
    interval_ns = round(interval_ms * 1e6)
    next_tick = clock.now_ns() + interval_ns
    while True:
        wait_s = (next_tick - clock.now_ns()) / 1e9
        if stop.wait(timeout=max(wait_s, 0.0)):
            break
        try:
            _take(backend, clock, sink)
        except (IPWError, OSError, ValueError) as exc:
            log.warning("sampler stopped on backend failure: %s", exc)
            return sink.close(error=f"{type(exc).__name__}: {exc}")
        next_tick += interval_ns
        now = clock.now_ns()
        if next_tick <= now:
            # fell behind; skip missed ticks rather than bursting
            next_tick = now + interval_ns - (now - next_tick) % interval_ns
    return sink.close()


class Sampler:
    """Background sampler owning one trace.

    On a virtual clock, replay backends are paced by the file's own timestamps
    (a row is read once the clock reaches it); every other backend is polled
    at ``start + k * interval`` for ``k >= 1``.
    """

    def __init__(
        self,
        backend: Backend,
        interval_ms: float = DEFAULT_INTERVAL_MS,
        clock: Clock | None = None,
    ):
        if interval_ms <= 0:
            raise ValueError("interval_ms must be positive")
        self.backend = backend
        self.interval_ms = interval_ms
        self.interval_ns = round(interval_ms * 1e6)
        self.clock = clock or SystemClock()
        self.sink = TraceAccumulator(interval_ms)
        self._virtual = isinstance(self.clock, VirtualClock)
        self._replay = isinstance(backend, ReplayBackend)
        if self._replay and not self._virtual:
            raise TelemetryError("replay backends run on a virtual clock")
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._next_tick: int | None = None
        self._last_replay_t: int | None = None
        self._trace: PowerTrace | None = None
        self._error: str | None = None

    # lifecycle
    def start(self) -> "Sampler":
        if self._virtual:
            if self._replay:
                self._next_tick = self._peek_replay()
            else:
                self._next_tick = self.clock.now_ns() + self.interval_ns
            self.clock.subscribe(self._on_advance)
            self._on_advance(self.clock.now_ns())
        else:
            self._thread = threading.Thread(
                target=self._run_thread, name="ipw-sampler", daemon=True
            )
            self._thread.start()
        return self

    def _run_thread(self) -> None:
        self._trace = run_sampler(self.backend, self.interval_ms, self.sink, self._stop, self.clock)

    def stop(self) -> PowerTrace:
        if self._virtual:
            self.clock.unsubscribe(self._on_advance)
            return self.sink.close(self._error)
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
        return self.sink.close()

    def __enter__(self) -> "Sampler":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    # virtual-clock driver
    def _peek_replay(self) -> int:
        backend: ReplayBackend = self.backend  # type: ignore[assignment]
        if backend.remaining:
            return backend._groups[backend._pos][0].t_ns
        last = self._last_replay_t if self._last_replay_t is not None else self.clock.now_ns()
        return last + self.interval_ns

    def _on_advance(self, now_ns: int) -> None:
        while self._error is None and self._next_tick is not None and self._next_tick <= now_ns:
            tick = self._next_tick
            try:
                _take(self.backend, _FixedClock(tick), self.sink)
            except (IPWError, OSError, ValueError) as exc:
                self._error = f"{type(exc).__name__}: {exc}"
                log.warning("sampler stopped on backend failure: %s", exc)
                self.sink.close(self._error)
                return
            if self._replay:
                self._last_replay_t = tick
                self._next_tick = self._peek_replay()
            else:
                self._next_tick = tick + self.interval_ns

    # coordination helpers for the orchestrator
    @property
    def error(self) -> str | None:
        if self._virtual:
            return self._error
        closed = self._trace
        return closed.error if closed is not None else None

    def snapshot(self) -> PowerTrace:
        return self.sink.snapshot()

    def wait_for(self, t_ns: int, timeout_s: float = 5.0) -> None:
        """Block until the trace holds a sample at or after ``t_ns``.

        On a virtual clock this advances time to the next due tick.
        """
        if self._virtual:
            while not self._has_sample_at_or_after(t_ns):
                if self._error is not None:
                    raise TelemetryError(f"sampler failed: {self._error}")
                assert self._next_tick is not None
                self.clock.advance_ns(max(self._next_tick - self.clock.now_ns(), 0))
            return
        deadline = self.clock.now_ns() + round(timeout_s * 1e9)
        while not self._has_sample_at_or_after(t_ns):
            if self._thread is not None and not self._thread.is_alive():
                raise TelemetryError(f"sampler stopped: {self.error}")
            if self.clock.now_ns() > deadline:
                raise TelemetryError("timed out waiting for a telemetry sample")
            self.clock.sleep(self.interval_ms / 4000)

    def _has_sample_at_or_after(self, t_ns: int) -> bool:
        snap = self.sink.snapshot()
        return bool(snap.samples) and snap.samples[-1].t_ns >= t_ns
