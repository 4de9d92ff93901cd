"""Telemetry backends.

A backend is described by a :class:`TelemetryBackendDescriptor` (what to read)
and opened into a :class:`Backend` (stateful reader). ``replay`` and
``synthetic`` are the reference implementations; the vendor shims live in
:mod:`ipw.telemetry.vendor` and are only smoke-tested on matching hardware.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from ipw.clock import Clock
from ipw.errors import BackendUnavailable, ReplayExhausted, TelemetryParseError
from ipw.telemetry.types import PowerSample

CAPABILITIES = frozenset({"power", "energy-counter", "memory", "temperature"})
KINDS = ("vendor-gpu", "vendor-soc", "replay", "synthetic")

REPLAY_COLUMNS = ("t_ns", "device_id", "power_watts", "memory_mb", "temperature_c")
_OPTIONAL_REPLAY_COLUMNS = ("host_memory_mb", "energy_j")

# Relative error declared by backends; vendor software power readings are
# commonly quoted at 10-15%, we record the upper end.
VENDOR_ERROR_BAND = 0.15

_SYNTHETIC_DEFAULTS: dict[str, float] = {
    "watts": 100.0,
    "devices": 1,
    "memory_mb": 0.0,
    "temperature_c": 40.0,
    "noise_watts": 0.0,
    "seed": 0,
}


@dataclass(frozen=True)
class TelemetryBackendDescriptor:
    kind: str
    source_uri: str
    capabilities: frozenset[str] = CAPABILITIES
    params: dict[str, float] = field(default_factory=dict, hash=False, compare=True)
    error_band: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}")
        unknown = set(self.capabilities) - CAPABILITIES
        if unknown:
            raise ValueError(f"unknown capabilities: {sorted(unknown)}")
        if self.kind == "replay" and not self.source_uri.removeprefix("replay:"):
            raise ValueError("replay backends must declare the file they read")
        if self.kind == "synthetic" and "seed" not in self.params:
            raise ValueError("synthetic backends must declare a seed")

    @property
    def path(self) -> Path:
        return Path(self.source_uri.removeprefix("replay:"))


def replay_backend(path: str | Path, capabilities=CAPABILITIES) -> TelemetryBackendDescriptor:
    return TelemetryBackendDescriptor("replay", f"replay:{path}", frozenset(capabilities))


def synthetic_backend(capabilities=CAPABILITIES, **params: float) -> TelemetryBackendDescriptor:
    unknown = set(params) - set(_SYNTHETIC_DEFAULTS)
    if unknown:
        raise ValueError(f"unknown synthetic parameters: {sorted(unknown)}")
    full = {**_SYNTHETIC_DEFAULTS, **params}
    uri = "synthetic:" + ",".join(f"{k}={full[k]:g}" for k in sorted(full))
    return TelemetryBackendDescriptor("synthetic", uri, frozenset(capabilities), full)


def parse_backend(spec: str) -> TelemetryBackendDescriptor:
    """Parse a CLI backend spec.

    Forms: ``replay:PATH``, ``synthetic:watts=100,devices=2,seed=0``,
    ``nvml``, ``rocm-smi``, ``powermetrics``.
    """
    if spec.startswith("replay:"):
        return replay_backend(spec.removeprefix("replay:"))
    if spec == "synthetic" or spec.startswith("synthetic:"):
        body = spec.partition(":")[2]
        params: dict[str, float] = {}
        for item in filter(None, body.split(",")):
            key, sep, value = item.partition("=")
            if not sep:
                raise ValueError(f"bad synthetic parameter {item!r}")
            params[key.strip()] = float(value)
        return synthetic_backend(**params)
    if spec in ("nvml", "rocm-smi"):
        return TelemetryBackendDescriptor("vendor-gpu", spec, CAPABILITIES, error_band=VENDOR_ERROR_BAND)
    if spec == "powermetrics":
        return TelemetryBackendDescriptor(
            "vendor-soc", spec, frozenset({"power", "memory"}), error_band=VENDOR_ERROR_BAND
        )
    raise ValueError(f"unrecognised backend spec {spec!r}")


class Backend(Protocol):
    descriptor: TelemetryBackendDescriptor

    def poll(self, clock: Clock) -> list[PowerSample]: ...

    def close(self) -> None: ...


def _project(sample: PowerSample, caps: frozenset[str]) -> PowerSample:
    return PowerSample(
        t_ns=sample.t_ns,
        device_id=sample.device_id,
        power_watts=sample.power_watts if "power" in caps else None,
        memory_mb=sample.memory_mb if "memory" in caps else None,
        temperature_c=sample.temperature_c if "temperature" in caps else None,
        host_memory_mb=sample.host_memory_mb if "memory" in caps else None,
        energy_j=sample.energy_j if "energy-counter" in caps else None,
    )


def _opt_float(raw: str | None, column: str, lineno: int) -> float | None:
    if raw is None or raw.strip() == "":
        return None
    try:
        return float(raw)
    except ValueError:
        raise TelemetryParseError(f"line {lineno}: bad {column} value {raw!r}") from None


def read_replay_file(path: str | Path) -> list[list[PowerSample]]:
    """Read a replay CSV into groups of rows sharing one timestamp, in file order."""
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise BackendUnavailable(f"cannot open replay file {path}: {exc}") from exc
    groups: list[list[PowerSample]] = []
    last_t: dict[str, int] = {}
    with fh:
        reader = csv.DictReader(fh)
        missing = [c for c in REPLAY_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise TelemetryParseError(f"{path}: missing columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            try:
                t_ns = int(row["t_ns"])
            except (TypeError, ValueError):
                raise TelemetryParseError(f"line {lineno}: bad t_ns {row['t_ns']!r}") from None
            device = row["device_id"]
            if device in last_t and t_ns <= last_t[device]:
                raise TelemetryParseError(
                    f"line {lineno}: timestamps for device {device!r} not strictly increasing"
                )
            last_t[device] = t_ns
            try:
                sample = PowerSample(
                    t_ns=t_ns,
                    device_id=device,
                    power_watts=_opt_float(row["power_watts"], "power_watts", lineno),
                    memory_mb=_opt_float(row["memory_mb"], "memory_mb", lineno),
                    temperature_c=_opt_float(row["temperature_c"], "temperature_c", lineno),
                    host_memory_mb=_opt_float(row.get("host_memory_mb"), "host_memory_mb", lineno),
                    energy_j=_opt_float(row.get("energy_j"), "energy_j", lineno),
                )
            except ValueError as exc:
                raise TelemetryParseError(f"line {lineno}: {exc}") from None
            if groups and groups[-1][0].t_ns == t_ns:
                groups[-1].append(sample)
            else:
                groups.append([sample])
    return groups


def write_replay_file(path: str | Path, samples: list[PowerSample]) -> None:
    columns = REPLAY_COLUMNS + _OPTIONAL_REPLAY_COLUMNS
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for s in samples:
            writer.writerow(
                [s.t_ns, s.device_id]
                + ["" if getattr(s, c) is None else repr(float(getattr(s, c))) for c in columns[2:]]
            )


class ReplayBackend:
    """Returns the file's rows one timestamp group per poll, verbatim."""

    def __init__(self, descriptor: TelemetryBackendDescriptor):
        self.descriptor = descriptor
        self._groups = read_replay_file(descriptor.path)
        self._pos = 0

    def poll(self, clock: Clock | None = None) -> list[PowerSample]:
        if self._pos >= len(self._groups):
            raise ReplayExhausted(f"replay file {self.descriptor.path} exhausted")
        group = self._groups[self._pos]
        self._pos += 1
        return [_project(s, self.descriptor.capabilities) for s in group]

    @property
    def remaining(self) -> int:
        return len(self._groups) - self._pos

    def close(self) -> None:
        pass


class SyntheticBackend:
    """Constant (optionally noisy) power per device, stamped from the clock.

    The energy counter is the running trapezoid of the backend's own readings,
    so it is exact for constant power.
    """

    def __init__(self, descriptor: TelemetryBackendDescriptor):
        self.descriptor = descriptor
        p = descriptor.params
        self.watts = float(p["watts"])
        self.devices = int(p["devices"])
        if self.devices < 1:
            raise ValueError("synthetic backend needs at least one device")
        self.memory_mb = float(p["memory_mb"])
        self.temperature_c = float(p["temperature_c"])
        self.noise_watts = float(p["noise_watts"])
        self._rng = np.random.default_rng(int(p["seed"]))
        self._last: list[tuple[int, float]] | None = None
        self._counters = [0.0] * self.devices

    def _power(self) -> float:
        if self.noise_watts == 0:
            return self.watts
        return max(0.0, float(self._rng.normal(self.watts, self.noise_watts)))

    def poll(self, clock: Clock) -> list[PowerSample]:
        t_ns = clock.now_ns()
        powers = [self._power() for _ in range(self.devices)]
        if self._last is not None:
            for i, (t_prev, p_prev) in enumerate(self._last):
                self._counters[i] += 0.5 * (p_prev + powers[i]) * (t_ns - t_prev) / 1e9
        self._last = [(t_ns, w) for w in powers]
        return [
            _project(
                PowerSample(
                    t_ns=t_ns,
                    device_id=f"synthetic{i}",
                    power_watts=w,
                    memory_mb=self.memory_mb,
                    temperature_c=self.temperature_c,
                    energy_j=self._counters[i],
                ),
                self.descriptor.capabilities,
            )
            for i, w in enumerate(powers)
        ]

    def close(self) -> None:
        pass


def open_backend(descriptor: TelemetryBackendDescriptor) -> Backend:
    if descriptor.kind == "replay":
        return ReplayBackend(descriptor)
    if descriptor.kind == "synthetic":
        return SyntheticBackend(descriptor)
    from ipw.telemetry import vendor

    return vendor.open_vendor_backend(descriptor)


def poll_backend(backend: Backend, clock: Clock) -> list[PowerSample]:
    """One reading per visible device, sharing a timestamp."""
    samples = backend.poll(clock)
    if not samples:
        raise TelemetryParseError("backend returned no devices")
    t0 = samples[0].t_ns
    if any(s.t_ns != t0 for s in samples):
        raise TelemetryParseError("backend returned devices with different timestamps")
    for s in samples:
        if s.power_watts is not None and not math.isfinite(s.power_watts):
            raise TelemetryParseError(f"non-finite power from device {s.device_id}")
    return samples
