"""Device power telemetry: backends, sampling, and energy integration."""

from ipw.telemetry.backends import (
    TelemetryBackendDescriptor,
    open_backend,
    parse_backend,
    poll_backend,
    replay_backend,
    synthetic_backend,
)
from ipw.telemetry.energy import WindowEnergy, energy_counter_delta, integrate_energy, measure_window
from ipw.telemetry.sampler import Sampler, run_sampler
from ipw.telemetry.types import (
    DEFAULT_INTERVAL_MS,
    AggregateSample,
    PowerSample,
    PowerTrace,
    TraceAccumulator,
    aggregate_devices,
)

__all__ = [
    "AggregateSample",
    "DEFAULT_INTERVAL_MS",
    "PowerSample",
    "PowerTrace",
    "Sampler",
    "TelemetryBackendDescriptor",
    "TraceAccumulator",
    "WindowEnergy",
    "aggregate_devices",
    "energy_counter_delta",
    "integrate_energy",
    "measure_window",
    "open_backend",
    "parse_backend",
    "poll_backend",
    "replay_backend",
    "run_sampler",
    "synthetic_backend",
]
