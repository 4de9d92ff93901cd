"""Vendor telemetry shims: NVML, ROCm SMI, macOS powermetrics.

Imports and subprocesses are deferred so this module is safe on hosts without
the hardware. The frame parsers are pure functions and unit-tested directly;
the live readers are only exercised on matching machines.
"""

from __future__ import annotations

import json
import plistlib
import subprocess
import threading

from ipw.clock import Clock
from ipw.errors import BackendUnavailable, TelemetryParseError
from ipw.telemetry.backends import TelemetryBackendDescriptor, _project
from ipw.telemetry.types import PowerSample

_MB = 1024 * 1024


def _host_memory_mb() -> float | None:
    try:
        import psutil
    except ImportError:
        return None
    return psutil.virtual_memory().used / _MB


class NvmlBackend:
    def __init__(self, descriptor: TelemetryBackendDescriptor):
        self.descriptor = descriptor
        try:
            import pynvml
        except ImportError as exc:
            raise BackendUnavailable("pynvml is not installed") from exc
        try:
            pynvml.nvmlInit()
            count = pynvml.nvmlDeviceGetCount()
        except Exception as exc:  # pynvml raises its own NVMLError hierarchy
            raise BackendUnavailable(f"NVML init failed: {exc}") from exc
        self._nvml = pynvml
        self._handles = [pynvml.nvmlDeviceGetHandleByIndex(i) for i in range(count)]

    def _read(self, handle, fn, *args):
        try:
            return fn(handle, *args)
        except self._nvml.NVMLError:
            return None

    def poll(self, clock: Clock) -> list[PowerSample]:
        nv = self._nvml
        t_ns = clock.now_ns()
        host = _host_memory_mb()
        out = []
        for i, h in enumerate(self._handles):
            mw = self._read(h, nv.nvmlDeviceGetPowerUsage)
            mj = self._read(h, nv.nvmlDeviceGetTotalEnergyConsumption)
            temp = self._read(h, nv.nvmlDeviceGetTemperature, nv.NVML_TEMPERATURE_GPU)
            mem = self._read(h, nv.nvmlDeviceGetMemoryInfo)
            sample = PowerSample(
                t_ns=t_ns,
                device_id=f"cuda{i}",
                power_watts=None if mw is None else mw / 1000.0,
                memory_mb=None if mem is None else mem.used / _MB,
                temperature_c=None if temp is None else float(temp),
                host_memory_mb=host,
                energy_j=None if mj is None else mj / 1000.0,
            )
            out.append(_project(sample, self.descriptor.capabilities))
        return out

    def close(self) -> None:
        try:
            self._nvml.nvmlShutdown()
        except Exception:
            pass


def _num(value) -> float | None:
    if value is None:
        return None
    try:
        return float(str(value).split()[0])
    except (ValueError, IndexError):
        return None


def parse_rocm_smi_json(payload: str, t_ns: int, host_memory_mb: float | None = None) -> list[PowerSample]:
    """Normalise ``rocm-smi --showpower --showtemp --showmeminfo vram --json`` output."""
    try:
        data = json.loads(payload)
    except json.JSONDecodeError as exc:
        raise TelemetryParseError(f"rocm-smi output is not JSON: {exc}") from exc
    out = []
    for card, fields in sorted(data.items()):
        if not card.startswith("card") or not isinstance(fields, dict):
            continue
        power = None
        for key in (
            "Current Socket Graphics Package Power (W)",
            "Average Graphics Package Power (W)",
        ):
            power = _num(fields.get(key))
            if power is not None:
                break
        temp = None
        for key in ("Temperature (Sensor junction) (C)", "Temperature (Sensor edge) (C)"):
            temp = _num(fields.get(key))
            if temp is not None:
                break
        vram = _num(fields.get("VRAM Total Used Memory (B)"))
        out.append(
            PowerSample(
                t_ns=t_ns,
                device_id=card,
                power_watts=power,
                memory_mb=None if vram is None else vram / _MB,
                temperature_c=temp,
                host_memory_mb=host_memory_mb,
            )
        )
    if not out:
        raise TelemetryParseError("rocm-smi output lists no cards")
    return out


class RocmSmiBackend:
    """Queries the primary device (card0 by default) through the rocm-smi CLI."""

    def __init__(self, descriptor: TelemetryBackendDescriptor, device: str = "card0"):
        self.descriptor = descriptor
        self.device = device
        self._cmd = ["rocm-smi", "--showpower", "--showtemp", "--showmeminfo", "vram", "--json"]
        try:
            subprocess.run(self._cmd, capture_output=True, check=True, timeout=10)
        except (OSError, subprocess.SubprocessError) as exc:
            raise BackendUnavailable(f"rocm-smi unavailable: {exc}") from exc

    def poll(self, clock: Clock) -> list[PowerSample]:
        t_ns = clock.now_ns()
        proc = subprocess.run(self._cmd, capture_output=True, text=True, timeout=10)
        samples = parse_rocm_smi_json(proc.stdout, t_ns, _host_memory_mb())
        chosen = [s for s in samples if s.device_id == self.device] or samples[:1]
        return [_project(s, self.descriptor.capabilities) for s in chosen]

    def close(self) -> None:
        pass


def parse_powermetrics_frame(frame: bytes, t_ns: int, host_memory_mb: float | None = None) -> PowerSample:
    """Extract GPU power (mW -> W) from one powermetrics plist frame."""
    try:
        data = plistlib.loads(frame.strip(b"\0\n "))
    except Exception as exc:
        raise TelemetryParseError(f"bad powermetrics plist frame: {exc}") from exc
    mw = None
    # Apple Silicon, then Intel Macs
    candidates = (
        ("processor_power", "actual"),
        ("processor", "combined_power"),
        ("gpu", "gpu_power"),
        ("processor", "gpu_power"),
    )
    for outer, inner in candidates:
        section = data.get(outer)
        if isinstance(section, dict) and inner in section:
            mw = float(section[inner])
            break
    if mw is None:
        raise TelemetryParseError("powermetrics frame carries no GPU power field")
    return PowerSample(
        t_ns=t_ns,
        device_id="apple-gpu",
        power_watts=mw / 1000.0,
        host_memory_mb=host_memory_mb,
    )


class PowermetricsBackend:
    """Reads the continuous plist stream of ``sudo powermetrics -f plist``."""

    def __init__(self, descriptor: TelemetryBackendDescriptor, interval_ms: int = 50):
        self.descriptor = descriptor
        cmd = [
            "sudo", "-n", "powermetrics",
            "--samplers", "cpu_power,gpu_power",
            "-f", "plist",
            "-i", str(interval_ms),
        ]
        try:
            self._proc = subprocess.Popen(cmd, stdout=subprocess.PIPE, stderr=subprocess.DEVNULL)
        except OSError as exc:
            raise BackendUnavailable(f"powermetrics unavailable: {exc}") from exc
        self._latest: bytes | None = None
        self._lock = threading.Lock()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self) -> None:
        buf = b""
        assert self._proc.stdout is not None
        for chunk in iter(lambda: self._proc.stdout.read(4096), b""):
            buf += chunk
            *frames, buf = buf.split(b"\0")
            if frames:
                with self._lock:
                    self._latest = frames[-1]

    def poll(self, clock: Clock) -> list[PowerSample]:
        t_ns = clock.now_ns()
        with self._lock:
            frame = self._latest
        if frame is None:
            if self._proc.poll() is not None:
                raise BackendUnavailable("powermetrics exited")
            raise TelemetryParseError("no powermetrics frame received yet")
        sample = parse_powermetrics_frame(frame, t_ns, _host_memory_mb())
        return [_project(sample, self.descriptor.capabilities)]

    def close(self) -> None:
        self._proc.terminate()


def open_vendor_backend(descriptor: TelemetryBackendDescriptor):
    if descriptor.source_uri == "nvml":
        return NvmlBackend(descriptor)
    if descriptor.source_uri == "rocm-smi":
        return RocmSmiBackend(descriptor)
    if descriptor.source_uri == "powermetrics":
        return PowermetricsBackend(descriptor)
    raise BackendUnavailable(f"no vendor adapter for {descriptor.source_uri!r}")
