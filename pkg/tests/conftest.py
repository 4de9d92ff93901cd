from __future__ import annotations

from pathlib import Path

import pytest

from ipw.telemetry.types import AggregateSample, PowerTrace

FIXTURES = Path(__file__).parent / "fixtures"


def make_trace(points, interval_ms=50.0, energy=None) -> PowerTrace:
    """Build a trace from ``(t_seconds, watts)`` pairs."""
    samples = []
    for i, (t_s, w) in enumerate(points):
        samples.append(
            AggregateSample(
                t_ns=round(t_s * 1e9),
                total_power_watts=float(w),
                total_memory_mb=None,
                mean_temperature_c=None,
                device_count=1,
                total_energy_j=None if energy is None else energy[i],
            )
        )
    return PowerTrace(tuple(samples), interval_ms)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES
