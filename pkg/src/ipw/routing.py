"""Local/cloud routing simulation over workload traces.

Each strategy turns a trace into per-query weights on the oracle's local
choice (the remainder goes to the cloud baseline). Expected-value mode keeps
fractional weights; Monte-Carlo mode draws 0/1 weights from a seeded RNG.
Because a misroute pays exactly the baseline cost, expected-value savings are
linear in the router accuracy.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ipw.errors import ProfileMissing, RoutingError, ZeroBaseline
from ipw.records import ProfilingRecord
from ipw.workload import TraceRow, WorkloadTrace

RESOURCES = ("energy_j", "flops", "cost_usd")
LOCAL, CLOUD = "local", "cloud"


@dataclass(frozen=True)
class Pricing:
    input_usd_per_1m: float
    output_usd_per_1m: float

    def __post_init__(self) -> None:
        if self.input_usd_per_1m < 0 or self.output_usd_per_1m < 0:
            raise ValueError("prices must be non-negative")


def cost_of_query(input_tokens: int, output_tokens: int, pricing: Pricing) -> float:
    if input_tokens < 0 or output_tokens < 0:
        raise ValueError("token counts must be non-negative")
    return input_tokens / 1e6 * pricing.input_usd_per_1m + output_tokens / 1e6 * pricing.output_usd_per_1m


def load_pricing(path: str | Path | None = None) -> dict[str, Pricing]:
    """Pricing table keyed by model id; the bundled table when no path is given."""
    if path is None:
        text = resources.files("ipw").joinpath("assets/pricing_openrouter.csv").read_text()
    else:
        text = Path(path).read_text()
    return {
        row["model_id"]: Pricing(float(row["input_usd_per_1m"]), float(row["output_usd_per_1m"]))
        for row in csv.DictReader(text.splitlines())
    }


@dataclass(frozen=True)
class EnergyFit:
    """``joules = intercept + per_input * in_tokens + per_output * out_tokens``."""

    intercept: float
    per_input: float
    per_output: float

    def __call__(self, input_tokens: int, output_tokens: int) -> float:
        return self.intercept + self.per_input * input_tokens + self.per_output * output_tokens

    def to_dict(self) -> dict[str, float]:
        return {"intercept": self.intercept, "per_input": self.per_input, "per_output": self.per_output}


def fit_energy_model(records: Sequence[ProfilingRecord]) -> EnergyFit:
    """Least-squares tokens to joules fit over one model's records."""
    if not records:
        raise RoutingError("cannot fit an energy model without records")
    x = np.array([[1.0, r.input, r.output] for r in records])
    y = np.array([r.per_query_joules for r in records])
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    return EnergyFit(*(float(c) for c in coef))


@dataclass
class ModelProfile:
    model_id: str
    location: str
    active_params: float
    pricing: Pricing | None = None
    energy_per_query_j: float | None = None
    energy_fit: EnergyFit | None = None
    measured_j: dict[str, float] = field(default_factory=dict)  # query_id -> joules
    flops_per_query: float | None = None

    def __post_init__(self) -> None:
        if self.location not in (LOCAL, CLOUD):
            raise ValueError(f"location must be {LOCAL!r} or {CLOUD!r}")

    def energy_j(self, row: TraceRow) -> float:
        if row.query_id in self.measured_j:
            return self.measured_j[row.query_id]
        if self.energy_fit is not None:
            return self.energy_fit(*row.tokens_for(self.model_id))
        if self.energy_per_query_j is not None:
            return self.energy_per_query_j
        raise ProfileMissing(f"no energy data for model {self.model_id!r}")

    def flops(self, row: TraceRow) -> float:
        if self.flops_per_query is not None:
            return self.flops_per_query
        return 2.0 * self.active_params * sum(row.tokens_for(self.model_id))

    def cost_usd(self, row: TraceRow) -> float:
        if self.pricing is None:
            raise ProfileMissing(f"no pricing for model {self.model_id!r}")
        return cost_of_query(*row.tokens_for(self.model_id), self.pricing)

    def resources(self, row: TraceRow) -> tuple[float, float, float]:
        return self.energy_j(row), self.flops(row), self.cost_usd(row)


@dataclass
class Pool:
    profiles: dict[str, ModelProfile]
    baseline: str

    def __post_init__(self) -> None:
        if self.baseline not in self.profiles:
            raise ProfileMissing(f"baseline {self.baseline!r} not in pool")
        if self.profiles[self.baseline].location != CLOUD:
            raise RoutingError("the baseline must be a cloud model")

    @classmethod
    def of(cls, profiles: Iterable[ModelProfile], baseline: str) -> "Pool":
        return cls({p.model_id: p for p in profiles}, baseline)

    @property
    def local(self) -> list[ModelProfile]:
        return [p for p in self.profiles.values() if p.location == LOCAL]


# strategies ------------------------------------------------------------------

@dataclass(frozen=True)
class CloudOnly:
    name: str = "cloud-only"


@dataclass(frozen=True)
class Oracle:
    name: str = "oracle"


@dataclass(frozen=True)
class PAccurate:
    p: float
    seed: int = 0
    mode: str = "expected-value"  # or "monte-carlo"

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must be in [0, 1]")
        if self.mode not in ("expected-value", "monte-carlo"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def name(self) -> str:
        if self.mode == "expected-value":
            return f"p-accurate(p={self.p:g})"
        return f"p-accurate(p={self.p:g},mc,seed={self.seed})"


Strategy = CloudOnly | Oracle | PAccurate


def parse_strategy(spec: str, seed: int = 0) -> Strategy:
    """``cloud-only``, ``oracle``, ``p=0.8`` or ``p=0.8,mode=monte-carlo,seed=3``."""
    spec = spec.strip()
    if spec in ("cloud", "cloud-only"):
        return CloudOnly()
    if spec == "oracle":
        return Oracle()
    if spec.startswith("p="):
        opts = dict(part.split("=", 1) for part in spec.split(","))
        mode = {"mc": "monte-carlo", "ev": "expected-value"}.get(opts.get("mode", "ev"), opts.get("mode"))
        return PAccurate(float(opts["p"]), int(opts.get("seed", seed)), mode)
    raise ValueError(f"unrecognised strategy {spec!r}")


def oracle_route(row: TraceRow, pool: Pool) -> str:
    """Smallest capable local model, else the cloud baseline.

    Ties on active parameters go to the lower per-query energy, then the
    lexicographically smaller id. Capable ids outside the pool are ignored.
    """
    capable = [p for p in pool.local if p.model_id in row.capable]
    if not capable:
        return pool.baseline
    return min(capable, key=lambda p: (p.active_params, p.energy_j(row), p.model_id)).model_id


def p_accurate_route(row: TraceRow, pool: Pool, p: float, rng: np.random.Generator | None = None):
    """Model id (with ``rng``) or a ``{model_id: weight}`` map (without)."""
    choice = oracle_route(row, pool)
    if choice == pool.baseline:
        return choice if rng is not None else {choice: 1.0}
    if rng is not None:
        return choice if rng.random() < p else pool.baseline
    if p == 1.0:
        return {choice: 1.0}
    if p == 0.0:
        return {pool.baseline: 1.0}
    return {choice: p, pool.baseline: 1.0 - p}


# simulation ------------------------------------------------------------------

@dataclass
class CostTable:
    """Per-row resources for the oracle choice and the baseline, shape (n, 3)."""

    choice: list[str]
    local: np.ndarray
    cloud: np.ndarray
    serviceable: np.ndarray
    offsets_s: np.ndarray
    query_ids: list[str]

    def costlier_local(self) -> list[tuple[str, str]]:
        """(query_id, resource) pairs where the local choice costs more than cloud."""
        out = []
        for i in np.flatnonzero(self.serviceable):
            for j, res in enumerate(RESOURCES):
                if self.local[i, j] > self.cloud[i, j]:
                    out.append((self.query_ids[i], res))
        return out


def cost_table(trace: WorkloadTrace, pool: Pool) -> CostTable:
    base = pool.profiles[pool.baseline]
    n = len(trace)
    local = np.zeros((n, 3))
    cloud = np.zeros((n, 3))
    choice = []
    for i, row in enumerate(trace):
        m = oracle_route(row, pool)
        choice.append(m)
        cloud[i] = base.resources(row)
        local[i] = cloud[i] if m == pool.baseline else pool.profiles[m].resources(row)
    return CostTable(
        choice=choice,
        local=local,
        cloud=cloud,
        serviceable=np.array([m != pool.baseline for m in choice], dtype=bool),
        offsets_s=np.asarray(trace.offsets_s(), dtype=float),
        query_ids=[r.query_id for r in trace],
    )


def local_weights(table: CostTable, strategy: Strategy) -> np.ndarray:
    """Per-row weight on the oracle choice; rows not locally serviceable get 0."""
    s = table.serviceable.astype(float)
    if isinstance(strategy, CloudOnly):
        return np.zeros_like(s)
    if isinstance(strategy, Oracle):
        return s
    if strategy.mode == "expected-value":
        return s * strategy.p
    draws = np.random.default_rng(strategy.seed).random(len(s))
    return s * (draws < strategy.p)


@dataclass
class StrategyRun:
    strategy: str
    totals: dict[str, float]
    per_query: np.ndarray  # (n, 3) contributions in trace order
    local_share: float  # fraction of queries (weight) served locally

    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.per_query, axis=0)


def run_strategy(table: CostTable, strategy: Strategy) -> StrategyRun:
    w = local_weights(table, strategy)[:, None]
    per_query = np.where(w == 0.0, table.cloud, np.where(w == 1.0, table.local, w * table.local + (1.0 - w) * table.cloud))
    totals = {res: math.fsum(per_query[:, j]) for j, res in enumerate(RESOURCES)}
    share = float(w.sum() / len(w)) if len(w) else 0.0
    return StrategyRun(strategy.name, totals, per_query, share)


def savings(totals: Mapping[str, float], baseline: Mapping[str, float]) -> dict[str, float]:
    """``1 - strategy / baseline`` per resource."""
    out = {}
    for res in RESOURCES:
        if baseline[res] <= 0:
            raise ZeroBaseline(f"baseline {res} total is {baseline[res]}")
        out[res] = 1.0 - totals[res] / baseline[res]
    return out


def _partial_savings(totals: Mapping[str, float], baseline: Mapping[str, float]) -> dict[str, float | None]:
    return {r: 1.0 - totals[r] / baseline[r] if baseline[r] > 0 else None for r in RESOURCES}


@dataclass
class SavingsReport:
    runs: dict[str, StrategyRun]
    savings: dict[str, dict[str, float | None]]
    undefined: tuple[str, ...]  # resources whose baseline total is zero (all of them for an empty trace)
    flags: list[tuple[str, str]]
    offsets_s: np.ndarray
    fits: dict[str, dict[str, float]] = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "n": len(self.offsets_s),
            "savings_undefined": list(self.undefined),
            "local_costlier": [list(f) for f in self.flags],
            "energy_fits": self.fits,
            "strategies": {
                name: {
                    "totals": run.totals,
                    "local_share": run.local_share,
                    "savings": self.savings[name],
                }
                for name, run in self.runs.items()
            },
        }

    def series(self, resolution_s: float | None = None) -> list[dict]:
        """Long-format cumulative series, one row per (strategy, time point).

        Without a resolution every query arrival is a point; with one the
        cumulative totals are sampled on a regular grid ending at the last
        arrival.
        """
        if len(self.offsets_s) == 0:
            return []
        if resolution_s is None:
            grid = self.offsets_s
            idx = np.arange(len(grid))
        else:
            if resolution_s <= 0:
                raise ValueError("resolution must be positive")
            end = float(self.offsets_s[-1])
            grid = np.append(np.arange(0.0, end, resolution_s), end)
            idx = np.searchsorted(self.offsets_s, grid, side="right") - 1
        rows = []
        for name, run in self.runs.items():
            cum = run.cumulative()
            for t, i in zip(grid, idx):
                vals = cum[i] if i >= 0 else np.zeros(3)
                rows.append({"strategy": name, "t_s": float(t), **{r: float(v) for r, v in zip(RESOURCES, vals)}})
        return rows


def simulate(trace: WorkloadTrace, strategies: Sequence[Strategy], pool: Pool) -> SavingsReport:
    """Runs the cloud-only baseline plus ``strategies`` and compares them."""
    if not strategies:
        raise RoutingError("no strategies requested")
    table = cost_table(trace, pool)
    baseline = run_strategy(table, CloudOnly())
    runs = {baseline.strategy: baseline}
    for s in strategies:
        runs[s.name] = run_strategy(table, s)
    undefined = tuple(r for r in RESOURCES if baseline.totals[r] <= 0)
    result = {name: _partial_savings(run.totals, baseline.totals) for name, run in runs.items()}
    fits = {m: p.energy_fit.to_dict() for m, p in sorted(pool.profiles.items()) if p.energy_fit is not None}
    return SavingsReport(runs, result, undefined, table.costlier_local(), table.offsets_s, fits)


def profiles_from_records(
    records: Sequence[ProfilingRecord],
    active_params: Mapping[str, float],
    pricing: Mapping[str, Pricing],
    cloud_models: Iterable[str],
) -> dict[str, ModelProfile]:
    """One profile per model: measured joules per query plus a fallback token fit."""
    by_model: dict[str, list[ProfilingRecord]] = {}
    for r in records:
        by_model.setdefault(r.model_id, []).append(r)
    cloud = set(cloud_models)
    out = {}
    for model, recs in sorted(by_model.items()):
        if model not in active_params:
            raise ProfileMissing(f"no parameter count for {model!r}")
        out[model] = ModelProfile(
            model_id=model,
            location=CLOUD if model in cloud else LOCAL,
            active_params=active_params[model],
            pricing=pricing.get(model),
            energy_fit=fit_energy_model(recs),
            measured_j={r.query_id: r.per_query_joules for r in recs},
        )
    return out


# synthetic traces ------------------------------------------------------------

def synthesize_trace(
    rate_per_s: float,
    duration_s: float,
    seed: int,
    local_models: Sequence[str],
    cloud_model: str,
    serviceable_fraction: float = 0.807,
    arrival: str = "poisson",
    input_lognormal: tuple[float, float] = (5.0, 1.0),
    output_lognormal: tuple[float, float] = (6.0, 0.8),
    start: datetime = datetime(2024, 1, 1, tzinfo=timezone.utc),
) -> WorkloadTrace:
    """Random trace with nested capability.

    ``local_models`` is ordered smallest first. A serviceable query is
    solvable by some prefix-cut of that list and by every larger model; the
    cloud model is always capable.
    """
    if rate_per_s <= 0:
        raise ValueError("rate must be positive")
    if not 0.0 <= serviceable_fraction <= 1.0:
        raise ValueError("serviceable fraction must be in [0, 1]")
    rng = np.random.default_rng(seed)
    if arrival == "poisson":
        times = []
        t = rng.exponential(1.0 / rate_per_s)
        while t < duration_s:
            times.append(t)
            t += rng.exponential(1.0 / rate_per_s)
        offsets = np.array(times)
    elif arrival == "uniform":
        n = int(round(rate_per_s * duration_s))
        offsets = np.sort(rng.uniform(0.0, duration_s, n)) if n else np.array([])
    else:
        raise ValueError(f"unknown arrival model {arrival!r}")
    n = len(offsets)
    serviceable = rng.random(n) < serviceable_fraction if local_models else np.zeros(n, bool)
    cut = rng.integers(0, max(len(local_models), 1), n)
    tin = np.maximum(1, np.rint(rng.lognormal(*input_lognormal, n))).astype(int)
    tout = np.maximum(1, np.rint(rng.lognormal(*output_lognormal, n))).astype(int)
    width = max(5, len(str(n)))
    rows = []
    for i in range(n):
        capable = {cloud_model}
        if serviceable[i]:
            capable.update(local_models[cut[i]:])
        # microsecond resolution so timestamps survive the CSV round trip
        t = start + timedelta(microseconds=int(round(offsets[i] * 1e6)))
        rows.append(TraceRow(t, f"q{i:0{width}d}", int(tin[i]), int(tout[i]), frozenset(capable)))
    return WorkloadTrace(rows)
