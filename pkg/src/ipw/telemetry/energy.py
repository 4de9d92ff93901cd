"""Energy from power traces: trapezoidal integration and counter deltas."""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass

from ipw.errors import CounterAbsent, CounterRegression, EmptyWindowCoverage
from ipw.telemetry.types import AggregateSample, PowerTrace


def _lerp(t: int, t0: int, v0: float, t1: int, v1: float) -> float:
    if t1 == t0:
        return v0
    return v0 + (v1 - v0) * ((t - t0) / (t1 - t0))


def _points(trace: PowerTrace, start_ns: int, end_ns: int, attr: str) -> list[tuple[int, float]]:
    """Piecewise-linear knots of ``attr`` restricted to the window.

    The window is clipped to the span of the trace; boundaries that fall
    between samples get linearly interpolated values.
    """
    if start_ns >= end_ns:
        raise ValueError(f"empty window [{start_ns}, {end_ns})")
    samples = trace.samples
    times = [s.t_ns for s in samples]
    if not samples or end_ns <= times[0] or start_ns > times[-1]:
        raise EmptyWindowCoverage(f"no sample within or bracketing [{start_ns}, {end_ns})")
    lo = max(start_ns, times[0])
    hi = min(end_ns, times[-1])

    def value_at(t: int) -> float:
        i = bisect_left(times, t)
        if i < len(times) and times[i] == t:
            return getattr(samples[i], attr)
        a, b = samples[i - 1], samples[i]
        return _lerp(t, a.t_ns, getattr(a, attr), b.t_ns, getattr(b, attr))

    knots = [(lo, value_at(lo))]
    for s in samples[bisect_right(times, lo) : bisect_left(times, hi)]:
        knots.append((s.t_ns, getattr(s, attr)))
    if hi > lo:
        knots.append((hi, value_at(hi)))
    return knots


def integrate_energy(trace: PowerTrace, start_ns: int, end_ns: int) -> float:
    """Joules drawn over ``[start_ns, end_ns)`` by the trapezoidal rule.

    Power is interpolated linearly at window edges that fall between samples.
    Portions of the window outside the trace's span contribute nothing, so the
    caller is responsible for bracketing the window with samples.
    """
    knots = _points(trace, start_ns, end_ns, "total_power_watts")
    # sum (p0 + p1) * dt_ns exactly-rounded, convert ns -> s once at the end
    acc = math.fsum((p0 + p1) * (t1 - t0) for (t0, p0), (t1, p1) in zip(knots, knots[1:]))
    return acc / 2e9


def energy_counter_delta(trace: PowerTrace, start_ns: int, end_ns: int) -> float:
    """Joules from the cumulative on-device counter across the window."""
    samples = trace.samples
    times = [s.t_ns for s in samples]
    lo = bisect_right(times, start_ns) - 1
    hi = bisect_left(times, end_ns)
    if lo < 0 or hi >= len(samples):
        if not samples or end_ns <= times[0] or start_ns > times[-1]:
            raise EmptyWindowCoverage(f"no sample within or bracketing [{start_ns}, {end_ns})")
    lo = max(lo, 0)
    hi = min(hi, len(samples) - 1)
    used: list[AggregateSample] = list(samples[lo : hi + 1])
    if any(s.total_energy_j is None for s in used):
        raise CounterAbsent("energy counter not reported across the window")
    for a, b in zip(used, used[1:]):
        if b.total_energy_j < a.total_energy_j:
            raise CounterRegression(
                f"energy counter decreased at t={b.t_ns} ({a.total_energy_j} -> {b.total_energy_j})"
            )
    knots = _points(trace, start_ns, end_ns, "total_energy_j")
    return max(0.0, knots[-1][1] - knots[0][1])


@dataclass(frozen=True)
class WindowEnergy:
    integrated_j: float
    counter_j: float | None
    counter_error: str | None = None  # e.g. a rejected wraparound

    @property
    def joules(self) -> float:
        """Counter value when available, integration otherwise."""
        return self.counter_j if self.counter_j is not None else self.integrated_j

    @property
    def source(self) -> str:
        return "counter" if self.counter_j is not None else "integration"


def measure_window(trace: PowerTrace, start_ns: int, end_ns: int) -> WindowEnergy:
    integrated = integrate_energy(trace, start_ns, end_ns)
    try:
        return WindowEnergy(integrated, energy_counter_delta(trace, start_ns, end_ns))
    except CounterAbsent:
        return WindowEnergy(integrated, None)
    except CounterRegression as exc:
        return WindowEnergy(integrated, None, str(exc))


def _interp_field(a, b, t: int, name: str) -> float | None:
    va, vb = getattr(a, name), getattr(b, name)
    if va is None or vb is None:
        return None
    return _lerp(t, a.t_ns, va, b.t_ns, vb)


def window_samples(trace: PowerTrace, start_ns: int, end_ns: int) -> list[AggregateSample]:
    """Samples inside ``[start_ns, end_ns)`` plus interpolated readings at both edges.

    The edge readings are the same values the integrator uses, so min/max over
    this list always bound the integrated average power.
    """
    samples = trace.samples
    times = [s.t_ns for s in samples]
    if not samples or end_ns <= times[0] or start_ns > times[-1]:
        raise EmptyWindowCoverage(f"no sample within or bracketing [{start_ns}, {end_ns})")

    def at(t: int) -> AggregateSample | None:
        i = bisect_left(times, t)
        if i < len(times) and times[i] == t:
            return samples[i]
        if i == 0 or i == len(times):
            return None
        a, b = samples[i - 1], samples[i]
        return AggregateSample(
            t_ns=t,
            total_power_watts=_interp_field(a, b, t, "total_power_watts"),
            total_memory_mb=_interp_field(a, b, t, "total_memory_mb"),
            mean_temperature_c=_interp_field(a, b, t, "mean_temperature_c"),
            device_count=a.device_count,
            host_memory_mb=_interp_field(a, b, t, "host_memory_mb"),
            total_energy_j=_interp_field(a, b, t, "total_energy_j"),
        )

    inner = trace.within(start_ns, end_ns)
    out = []
    first = at(start_ns)
    if first is not None and (not inner or inner[0].t_ns != start_ns):
        out.append(first)
    out.extend(inner)
    last = at(end_ns)
    if last is not None:
        out.append(last)
    return out
