"""Efficiency metrics over profiling records.

All four efficiency metrics are ratios of means over the record set, never
means of per-query ratios.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from statistics import NormalDist
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from ipw.errors import CategoryMismatch, MetricError, MissingField
from ipw.records import CATEGORIES, ProfilingRecord

US_GDP_2024_TRILLIONS = 29.18
DIFFICULTY_THRESHOLDS = (4e9, 8e9, 20e9, 235e9)
UNSOLVABLE = 5


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def _column(records: Sequence[ProfilingRecord], name: str, get: Callable[[ProfilingRecord], object]) -> list[float]:
    if not records:
        raise MetricError("record set is empty")
    out = []
    for rec in records:
        value = get(rec)
        if value is None:
            raise MissingField(f"record {rec.query_id!r} ({rec.model_id}) lacks {name}")
        out.append(float(value))
    return out


def accuracies(records: Sequence[ProfilingRecord]) -> list[float]:
    return _column(records, "success", lambda r: r.success)


def powers(records: Sequence[ProfilingRecord]) -> list[float]:
    return _column(records, "per_query_watts.avg", lambda r: r.per_query_watts.avg if r.per_query_watts else None)


def energies(records: Sequence[ProfilingRecord]) -> list[float]:
    return _column(records, "per_query_joules", lambda r: r.per_query_joules)


def accuracy_per_watt(records: Sequence[ProfilingRecord]) -> float:
    return _mean(accuracies(records)) / _mean(powers(records))


def accuracy_per_joule(records: Sequence[ProfilingRecord]) -> float:
    return _mean(accuracies(records)) / _mean(energies(records))


@dataclass(frozen=True)
class PerplexityMetric:
    value: float | None
    n: int
    excluded: int


def _perplexity_metric(records, denominator, subset: bool) -> PerplexityMetric:
    bearing = [r for r in records if r.perplexity is not None]
    excluded = len(records) - len(bearing)
    if not bearing or (excluded and not subset):
        return PerplexityMetric(None, len(bearing), excluded)
    ppl = _mean([float(r.perplexity) for r in bearing])
    return PerplexityMetric(1.0 / (ppl * _mean(denominator(bearing))), len(bearing), excluded)


def perplexity_per_watt(records: Sequence[ProfilingRecord], subset: bool = False) -> PerplexityMetric:
    """``1 / (E[ppl] * E[P])``.

    With ``subset=False`` any record lacking perplexity makes the metric
    absent; with ``subset=True`` it is computed over the records that have it.
    Either way the exclusion count is reported.
    """
    return _perplexity_metric(records, powers, subset)


def perplexity_per_joule(records: Sequence[ProfilingRecord], subset: bool = False) -> PerplexityMetric:
    return _perplexity_metric(records, energies, subset)


def perplexity_from_logprobs(token_logprobs: Sequence[float]) -> float:
    """``exp(-mean(logprobs))`` for natural-log token probabilities."""
    if len(token_logprobs) == 0:
        raise ValueError("need at least one logprob")
    if any(lp > 0 for lp in token_logprobs):
        raise ValueError("log-probabilities must be <= 0")
    return math.exp(-math.fsum(token_logprobs) / len(token_logprobs))


@dataclass(frozen=True)
class MeanCI:
    mean: float
    half_width: float
    n: int
    single: bool = False  # half_width is 0 only because n == 1


def mean_ci(
    values: Sequence[float],
    confidence: float = 0.95,
    method: str = "normal",
    seed: int = 0,
    n_boot: int = 2000,
) -> MeanCI:
    """Mean with a normal-approximation (default) or percentile-bootstrap interval."""
    n = len(values)
    if n == 0:
        raise ValueError("mean_ci needs at least one value")
    mean = _mean(values)
    if n == 1:
        return MeanCI(mean, 0.0, 1, single=True)
    if method == "normal":
        z = NormalDist().inv_cdf(0.5 + confidence / 2)
        var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
        return MeanCI(mean, z * math.sqrt(var) / math.sqrt(n), n)
    if method == "bootstrap":
        rng = np.random.default_rng(seed)
        arr = np.asarray(values, dtype=float)
        means = arr[rng.integers(0, n, size=(n_boot, n))].mean(axis=1)
        lo, hi = np.quantile(means, [(1 - confidence) / 2, (1 + confidence) / 2])
        return MeanCI(mean, float(hi - lo) / 2, n)
    raise ValueError(f"unknown interval method {method!r}")


@dataclass
class EfficiencyReport:
    n: int
    apw: float | None
    apj: float | None
    ppw: float | None
    ppj: float | None
    mean_accuracy: float | None
    mean_power_watts: float
    mean_energy_joules: float
    mean_perplexity: float | None
    perplexity_n: int
    perplexity_excluded: int
    ci95: dict[str, float] = field(default_factory=dict)
    error_band: float | None = None

    def as_row(self) -> dict:
        row = {k: v for k, v in self.__dict__.items() if k != "ci95"}
        for k, v in self.ci95.items():
            row[f"{k}_ci95"] = v
        return row


def efficiency_report(
    records: Sequence[ProfilingRecord], confidence: float = 0.95, ci_method: str = "normal", seed: int = 0
) -> EfficiencyReport:
    """All four metrics for one record group.

    Accuracy metrics are absent when no record carries a success label and
    raise when only some do. Perplexity metrics use the perplexity-bearing
    subset and report how many records were excluded.
    """
    if not records:
        raise MetricError("record set is empty")
    pw, en = powers(records), energies(records)
    labelled = [r.success is not None for r in records]
    acc = accuracies(records) if any(labelled) else None
    ppw = perplexity_per_watt(records, subset=True)
    ppj = perplexity_per_joule(records, subset=True)
    ppls = [float(r.perplexity) for r in records if r.perplexity is not None]

    ci = {
        "mean_power_watts": mean_ci(pw, confidence, ci_method, seed).half_width,
        "mean_energy_joules": mean_ci(en, confidence, ci_method, seed).half_width,
    }
    if acc is not None:
        ci["mean_accuracy"] = mean_ci(acc, confidence, ci_method, seed).half_width
    if ppls:
        ci["mean_perplexity"] = mean_ci(ppls, confidence, ci_method, seed).half_width
    bands = {r.error_band for r in records if r.error_band is not None}
    mean_acc = _mean(acc) if acc is not None else None
    return EfficiencyReport(
        n=len(records),
        apw=None if mean_acc is None else mean_acc / _mean(pw),
        apj=None if mean_acc is None else mean_acc / _mean(en),
        ppw=ppw.value,
        ppj=ppj.value,
        mean_accuracy=mean_acc,
        mean_power_watts=_mean(pw),
        mean_energy_joules=_mean(en),
        mean_perplexity=_mean(ppls) if ppls else None,
        perplexity_n=ppw.n,
        perplexity_excluded=ppw.excluded,
        ci95=ci,
        error_band=max(bands) if bands else None,
    )


def group_records(
    records: Iterable[ProfilingRecord], keys: Sequence[str] = ("model_id", "hardware_id")
) -> dict[tuple, list[ProfilingRecord]]:
    groups: dict[tuple, list[ProfilingRecord]] = {}
    for rec in records:
        groups.setdefault(tuple(getattr(rec, k) for k in keys), []).append(rec)
    return dict(sorted(groups.items()))


# coverage and difficulty -------------------------------------------------------

Correctness = Mapping[str, Mapping[str, bool]]  # model_id -> query_id -> solved


def correctness_matrix(records: Iterable[ProfilingRecord]) -> dict[str, dict[str, bool]]:
    out: dict[str, dict[str, bool]] = {}
    for rec in records:
        if rec.success is not None:
            out.setdefault(rec.model_id, {})[rec.query_id] = bool(rec.success)
    return out


def _query_set(correct: Correctness, subset: Sequence[str]) -> set[str]:
    if not subset:
        raise MetricError("model subset is empty")
    missing = [m for m in subset if m not in correct]
    if missing:
        raise MetricError(f"no correctness data for models {missing}")
    queries = set(correct[subset[0]])
    for m in subset[1:]:
        if set(correct[m]) != queries:
            raise MetricError(f"correctness matrix incomplete for model {m!r}")
    return queries


def coverage(correct: Correctness, subset: Sequence[str]) -> float:
    """Fraction of queries solved by at least one model in ``subset``."""
    queries = _query_set(correct, subset)
    if not queries:
        raise MetricError("no queries to cover")
    solved = sum(1 for q in queries if any(correct[m][q] for m in subset))
    return solved / len(queries)


def difficulty_label(solved_by: Iterable[tuple[str, float]]) -> int:
    """Level 1-4 from the smallest solving model's active parameters; 5 if unsolved.

    Solvers above the last threshold still land in level 4, so level 5 is
    reserved for queries nobody solved.
    """
    sizes = [float(p) for _, p in solved_by]
    if not sizes:
        return UNSOLVABLE
    smallest = min(sizes)
    for level, limit in enumerate(DIFFICULTY_THRESHOLDS, start=1):
        if smallest <= limit:
            return level
    return len(DIFFICULTY_THRESHOLDS)


def difficulty_labels(correct: Correctness, active_params: Mapping[str, float]) -> dict[str, int]:
    models = sorted(correct)
    missing = [m for m in models if m not in active_params]
    if missing:
        raise MissingField(f"no parameter count for models {missing}")
    queries = sorted(_query_set(correct, models)) if models else []
    return {
        q: difficulty_label((m, active_params[m]) for m in models if correct[m][q])
        for q in queries
    }


def difficulty_histogram(labels: Mapping[str, int]) -> dict[int, int]:
    hist = {level: 0 for level in range(1, UNSOLVABLE + 1)}
    for level in labels.values():
        hist[level] += 1
    return hist


def load_param_registry(path: str | Path) -> dict[str, float]:
    with Path(path).open(newline="") as fh:
        return {row["model_id"]: float(row["active_params"]) for row in csv.DictReader(fh)}


# GDP weighting ---------------------------------------------------------------

@dataclass(frozen=True)
class GdpTable:
    gdp: Mapping[str, float]
    total_gdp_trillions: float = US_GDP_2024_TRILLIONS

    def __post_init__(self) -> None:
        if self.total_gdp_trillions <= 0:
            raise ValueError("total GDP must be positive")
        for cat, value in self.gdp.items():
            if cat not in CATEGORIES:
                raise CategoryMismatch(f"unknown category {cat!r}")
            if value < 0:
                raise ValueError(f"negative GDP for {cat!r}")


def load_gdp_table(path: str | Path, total_gdp_trillions: float = US_GDP_2024_TRILLIONS) -> GdpTable:
    with Path(path).open(newline="") as fh:
        rows = {row["category"]: float(row["gdp_trillions"]) for row in csv.DictReader(fh)}
    return GdpTable(rows, total_gdp_trillions)


def gdp_weighted_accuracy(per_category_accuracy: Mapping[str, float], table: GdpTable) -> tuple[float, float]:
    """Returns ``(GDP-weighted accuracy, addressable GDP in trillions)``.

    Weights are normalised over the categories that have an accuracy.
    """
    missing = [c for c in per_category_accuracy if c not in table.gdp]
    if missing:
        raise CategoryMismatch(f"no GDP entry for {missing}")
    cats = sorted(per_category_accuracy)
    total = math.fsum(table.gdp[c] for c in cats)
    if total <= 0:
        raise MetricError("GDP over the scored categories sums to zero")
    addressable = math.fsum(per_category_accuracy[c] * table.gdp[c] for c in cats)
    return addressable / total, addressable


def per_category_accuracy(records: Iterable[ProfilingRecord]) -> dict[str, float]:
    buckets: dict[str, list[float]] = {}
    for rec in records:
        if rec.category is not None and rec.success is not None:
            buckets.setdefault(rec.category, []).append(float(rec.success))
    return {c: _mean(v) for c, v in sorted(buckets.items())}


# longitudinal ----------------------------------------------------------------

def yoy_gains(series: Sequence[tuple[str, float]]) -> tuple[list[tuple[str, float]], float]:
    """Step ratios between consecutive entries and their product."""
    if len(series) < 2:
        raise ValueError("need at least two entries")
    for label, value in series:
        if value <= 0:
            raise ValueError(f"non-positive value for {label!r}")
    ratios = [(label, value / prev) for (_, prev), (label, value) in zip(series, series[1:])]
    return ratios, math.prod(r for _, r in ratios)
