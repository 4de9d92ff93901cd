"""Telemetry data types."""

from __future__ import annotations

import csv
import io
import math
import threading
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ipw.errors import EmptyInput, MixedTimestamps, TelemetryError

DEFAULT_INTERVAL_MS = 50.0


@dataclass(frozen=True)
class PowerSample:
    """One device reading. ``None`` means the backend cannot report that field."""

    t_ns: int
    device_id: str
    power_watts: float | None
    memory_mb: float | None = None
    temperature_c: float | None = None
    host_memory_mb: float | None = None
    energy_j: float | None = None  # cumulative on-device counter

    def __post_init__(self) -> None:
        for name in ("power_watts", "memory_mb", "host_memory_mb"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")


@dataclass(frozen=True)
class AggregateSample:
    t_ns: int
    total_power_watts: float
    total_memory_mb: float | None
    mean_temperature_c: float | None
    device_count: int
    host_memory_mb: float | None = None
    total_energy_j: float | None = None


def aggregate_devices(samples: Sequence[PowerSample]) -> AggregateSample:
    """Collapse simultaneous per-device readings into one host-level reading.

    Power, memory and energy counters are summed; temperature is averaged over
    the devices that report it. Sums use ``math.fsum`` so the result does not
    depend on device order.
    """
    if not samples:
        raise EmptyInput("aggregate_devices needs at least one sample")
    t_ns = samples[0].t_ns
    if any(s.t_ns != t_ns for s in samples):
        raise MixedTimestamps("samples passed to aggregate_devices must share one timestamp")

    powers = [s.power_watts for s in samples if s.power_watts is not None]
    if len(powers) != len(samples):
        raise TelemetryError("every device must report power to be aggregated")
    mems = [s.memory_mb for s in samples if s.memory_mb is not None]
    temps = sorted(s.temperature_c for s in samples if s.temperature_c is not None)
    hosts = [s.host_memory_mb for s in samples if s.host_memory_mb is not None]
    energies = [s.energy_j for s in samples if s.energy_j is not None]

    return AggregateSample(
        t_ns=t_ns,
        total_power_watts=math.fsum(powers),
        total_memory_mb=math.fsum(mems) if mems else None,
        mean_temperature_c=math.fsum(temps) / len(temps) if temps else None,
        device_count=len(samples),
        # host memory is a per-host quantity repeated on every device row
        host_memory_mb=max(hosts) if hosts else None,
        total_energy_j=math.fsum(energies) if len(energies) == len(samples) else None,
    )


_CSV_FIELDS = (
    "t_ns",
    "total_power_watts",
    "total_memory_mb",
    "mean_temperature_c",
    "device_count",
    "host_memory_mb",
    "total_energy_j",
)


def _fmt(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class PowerTrace:
    """Closed, immutable sequence of aggregate samples."""

    samples: tuple[AggregateSample, ...]
    nominal_interval_ms: float = DEFAULT_INTERVAL_MS
    error: str | None = None

    def __post_init__(self) -> None:
        if self.nominal_interval_ms <= 0:
            raise ValueError("nominal_interval_ms must be positive")
        for prev, cur in zip(self.samples, self.samples[1:]):
            if cur.t_ns <= prev.t_ns:
                raise ValueError(
                    f"trace timestamps must be strictly increasing ({prev.t_ns} -> {cur.t_ns})"
                )

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def ok(self) -> bool:
        return self.error is None

    def times_ns(self) -> list[int]:
        return [s.t_ns for s in self.samples]

    def within(self, start_ns: int, end_ns: int) -> list[AggregateSample]:
        """Samples with ``start_ns <= t_ns < end_ns``."""
        return [s for s in self.samples if start_ns <= s.t_ns < end_ns]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_CSV_FIELDS)
        for s in self.samples:
            writer.writerow([_fmt(getattr(s, name)) for name in _CSV_FIELDS])
        if self.error is not None:
            writer.writerow([f"# error: {self.error}"])
        return buf.getvalue()

    @classmethod
    def from_samples(
        cls, samples: Iterable[AggregateSample], nominal_interval_ms: float = DEFAULT_INTERVAL_MS
    ) -> "PowerTrace":
        return cls(tuple(samples), nominal_interval_ms)


@dataclass
class TraceAccumulator:
    """Single-writer sink the sampler appends to.

    Readers should call :meth:`snapshot` or wait for :meth:`close`; both return
    an immutable :class:`PowerTrace`.
    """

    nominal_interval_ms: float = DEFAULT_INTERVAL_MS
    _samples: list[AggregateSample] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _closed: PowerTrace | None = None

    def append(self, sample: AggregateSample) -> None:
        with self._lock:
            if self._closed is not None:
                raise TelemetryError("trace already closed")
            if self._samples and sample.t_ns <= self._samples[-1].t_ns:
                raise TelemetryError(
                    f"non-increasing timestamp {sample.t_ns} after {self._samples[-1].t_ns}"
                )
            self._samples.append(sample)

    def __len__(self) -> int:
        return len(self._samples)

    def snapshot(self) -> PowerTrace:
        with self._lock:
            return PowerTrace(tuple(self._samples), self.nominal_interval_ms)

    def close(self, error: str | None = None) -> PowerTrace:
        with self._lock:
            if self._closed is None:
                self._closed = PowerTrace(tuple(self._samples), self.nominal_interval_ms, error)
            return self._closed

    @property
    def closed(self) -> bool:
        return self._closed is not None
