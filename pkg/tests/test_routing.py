from __future__ import annotations

from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from ipw.errors import ProfileMissing, RoutingError, ZeroBaseline
from ipw.orchestrator import Stats
from ipw.records import ProfilingRecord
from ipw.routing import (
    CLOUD,
    LOCAL,
    CloudOnly,
    ModelProfile,
    Oracle,
    PAccurate,
    Pool,
    Pricing,
    cost_of_query,
    fit_energy_model,
    load_pricing,
    oracle_route,
    p_accurate_route,
    parse_strategy,
    profiles_from_records,
    savings,
    simulate,
    synthesize_trace,
)
from ipw.workload import TraceRow, WorkloadTrace, trace_to_csv

T0 = datetime(2024, 1, 1, tzinfo=timezone.utc)


def row(i, capable, tin=100, tout=100):
    return TraceRow(T0 + timedelta(seconds=i), f"q{i}", tin, tout, frozenset(capable))


def ten_query_pool():
    return Pool.of(
        [
            ModelProfile("cloud", CLOUD, 235e9, Pricing(0.22, 0.88), energy_per_query_j=10.0),
            ModelProfile("local", LOCAL, 4e9, Pricing(0.0, 0.0), energy_per_query_j=2.0),
        ],
        "cloud",
    )


def ten_query_trace():
    return WorkloadTrace([row(i, {"cloud", "local"} if i < 8 else {"cloud"}) for i in range(10)])


def test_cost_of_query():
    prices = load_pricing()
    assert cost_of_query(1000, 500, prices["Qwen3-14B"]) == pytest.approx(1.22e-4, rel=1e-12)
    assert cost_of_query(0, 0, prices["Qwen3-235B"]) == 0.0
    assert cost_of_query(10**7, 10**7, prices["Qwen3-4B"]) == 0.0
    assert prices["GPT-OSS-120B"] == Pricing(0.15, 0.60)
    assert len(prices) == 7
    with pytest.raises(ValueError):
        Pricing(-1.0, 0.0)


def test_oracle_route_examples():
    pool = Pool.of(
        [
            ModelProfile("cloud", CLOUD, 235e9, energy_per_query_j=10.0),
            ModelProfile("q4b", LOCAL, 4e9, energy_per_query_j=1.0),
            ModelProfile("q8b", LOCAL, 8e9, energy_per_query_j=3.0),
            ModelProfile("q8b-alt", LOCAL, 8e9, energy_per_query_j=2.0),
            ModelProfile("q14b", LOCAL, 14e9, energy_per_query_j=4.0),
        ],
        "cloud",
    )
    assert oracle_route(row(0, {"q8b", "q14b", "cloud"}), pool) == "q8b"
    assert oracle_route(row(0, {"cloud"}), pool) == "cloud"
    assert oracle_route(row(0, {"q8b", "q8b-alt", "cloud"}), pool) == "q8b-alt"


def test_oracle_tie_on_energy_uses_id():
    pool = Pool.of(
        [
            ModelProfile("cloud", CLOUD, 1e11, energy_per_query_j=10.0),
            ModelProfile("b", LOCAL, 8e9, energy_per_query_j=2.0),
            ModelProfile("a", LOCAL, 8e9, energy_per_query_j=2.0),
        ],
        "cloud",
    )
    assert oracle_route(row(0, {"a", "b"}), pool) == "a"


def test_p_accurate_route():
    pool = ten_query_pool()
    r_local, r_cloud = row(0, {"local", "cloud"}), row(1, {"cloud"})
    assert p_accurate_route(r_local, pool, 0.8) == {"local": 0.8, "cloud": pytest.approx(0.2)}
    assert p_accurate_route(r_local, pool, 1.0) == {"local": 1.0}
    assert p_accurate_route(r_local, pool, 0.0) == {"cloud": 1.0}
    assert p_accurate_route(r_cloud, pool, 0.8) == {"cloud": 1.0}
    rng = np.random.default_rng(0)
    assert p_accurate_route(r_local, pool, 1.0, rng) == "local"
    assert p_accurate_route(r_local, pool, 0.0, rng) == "cloud"


def test_simulate_ten_queries():
    rep = simulate(ten_query_trace(), [Oracle(), PAccurate(0.5)], ten_query_pool())
    assert rep.runs["cloud-only"].totals["energy_j"] == 100.0
    assert rep.runs["oracle"].totals["energy_j"] == 36.0
    assert rep.savings["oracle"]["energy_j"] == pytest.approx(0.64)
    assert rep.savings["p-accurate(p=0.5)"]["energy_j"] == pytest.approx(0.32)
    assert rep.savings["cloud-only"] == {"energy_j": 0.0, "flops": 0.0, "cost_usd": 0.0}


def test_boundaries_equal_oracle_and_cloud():
    trace = synthesize_trace(1.0, 200.0, seed=1, local_models=["s", "m"], cloud_model="c")
    pool = Pool.of(
        [
            ModelProfile("c", CLOUD, 235e9, Pricing(0.22, 0.88), energy_per_query_j=30.0),
            ModelProfile("s", LOCAL, 4e9, Pricing(0, 0), energy_per_query_j=3.0),
            ModelProfile("m", LOCAL, 14e9, Pricing(0.06, 0.124), energy_per_query_j=7.0),
        ],
        "c",
    )
    rep = simulate(trace, [PAccurate(1.0), PAccurate(0.0), Oracle()], pool)
    assert rep.runs["p-accurate(p=1)"].totals == rep.runs["oracle"].totals
    assert rep.runs["p-accurate(p=0)"].totals == rep.runs["cloud-only"].totals


def test_monotone_in_p_and_oracle_dominates():
    trace = synthesize_trace(2.0, 100.0, seed=2, local_models=["s"], cloud_model="c")
    pool = Pool.of(
        [
            ModelProfile("c", CLOUD, 235e9, Pricing(0.22, 0.88), energy_per_query_j=30.0),
            ModelProfile("s", LOCAL, 4e9, Pricing(0.0, 0.0), energy_per_query_j=3.0),
        ],
        "c",
    )
    ps = [0.0, 0.25, 0.5, 0.75, 1.0]
    rep = simulate(trace, [Oracle()] + [PAccurate(p) for p in ps], pool)
    for res in ("energy_j", "flops", "cost_usd"):
        seq = [rep.savings[PAccurate(p).name][res] for p in ps]
        assert seq == sorted(seq)
        assert all(s <= rep.savings["oracle"][res] + 1e-12 for s in seq)
    assert rep.flags == []


def test_costlier_local_flagged():
    pool = Pool.of(
        [
            ModelProfile("c", CLOUD, 1e11, Pricing(0.0, 0.0), energy_per_query_j=1.0),
            ModelProfile("s", LOCAL, 4e9, Pricing(1.0, 1.0), energy_per_query_j=5.0),
        ],
        "c",
    )
    rep = simulate(WorkloadTrace([row(0, {"c", "s"})]), [Oracle()], pool)
    assert ("q0", "energy_j") in rep.flags and ("q0", "cost_usd") in rep.flags
    assert rep.savings["oracle"]["energy_j"] == pytest.approx(-4.0)
    assert rep.undefined == ("cost_usd",) and rep.savings["oracle"]["cost_usd"] is None


def test_empty_trace_flagged_undefined():
    rep = simulate(WorkloadTrace([]), [Oracle()], ten_query_pool())
    assert rep.undefined == ("energy_j", "flops", "cost_usd")
    assert rep.savings["oracle"] == {"energy_j": None, "flops": None, "cost_usd": None}
    assert rep.runs["oracle"].totals == {"energy_j": 0.0, "flops": 0.0, "cost_usd": 0.0}
    assert rep.series() == []


def test_savings_function():
    base = {"energy_j": 100.0, "flops": 10.0, "cost_usd": 1.0}
    assert savings({"energy_j": 36.0, "flops": 10.0, "cost_usd": 1.0}, base)["energy_j"] == pytest.approx(0.64)
    assert savings(base, base) == {"energy_j": 0.0, "flops": 0.0, "cost_usd": 0.0}
    with pytest.raises(ZeroBaseline):
        savings(base, {"energy_j": 0.0, "flops": 1.0, "cost_usd": 1.0})


def test_series_conservation_and_resolution():
    trace = synthesize_trace(0.5, 600.0, seed=4, local_models=["local"], cloud_model="cloud")
    pool = Pool.of(
        [
            ModelProfile("cloud", CLOUD, 235e9, Pricing(0.22, 0.88), energy_per_query_j=10.0),
            ModelProfile("local", LOCAL, 4e9, Pricing(0.0, 0.0), energy_per_query_j=2.0),
        ],
        "cloud",
    )
    rep = simulate(trace, [Oracle()], pool)
    run = rep.runs["oracle"]
    assert run.cumulative()[-1][0] == pytest.approx(run.totals["energy_j"], rel=1e-12)
    coarse = [r for r in rep.series(60.0) if r["strategy"] == "oracle"]
    assert coarse[0]["t_s"] == 0.0 and coarse[-1]["t_s"] == pytest.approx(rep.offsets_s[-1])
    assert coarse[-1]["energy_j"] == pytest.approx(run.totals["energy_j"])
    energies = [r["energy_j"] for r in coarse]
    assert energies == sorted(energies)


def test_monte_carlo_reproducible():
    trace = synthesize_trace(1.0, 100.0, seed=5, local_models=["local"], cloud_model="cloud")
    a = simulate(trace, [PAccurate(0.6, seed=9, mode="monte-carlo")], ten_query_pool())
    b = simulate(trace, [PAccurate(0.6, seed=9, mode="monte-carlo")], ten_query_pool())
    name = PAccurate(0.6, seed=9, mode="monte-carlo").name
    assert a.runs[name].totals == b.runs[name].totals
    # each query is either fully local or fully cloud
    per = a.runs[name].per_query[:, 0]
    assert set(per.tolist()) <= {2.0, 10.0}


def test_profile_missing():
    pool = Pool.of([ModelProfile("cloud", CLOUD, 1e11), ModelProfile("l", LOCAL, 1e9)], "cloud")
    with pytest.raises(ProfileMissing):
        simulate(WorkloadTrace([row(0, {"cloud"})]), [Oracle()], pool)
    with pytest.raises(RoutingError):
        simulate(ten_query_trace(), [], ten_query_pool())
    with pytest.raises(RoutingError):
        Pool.of([ModelProfile("l", LOCAL, 1e9)], "l")


def test_parse_strategy():
    assert parse_strategy("oracle") == Oracle()
    assert parse_strategy("cloud-only") == CloudOnly()
    assert parse_strategy("p=0.8") == PAccurate(0.8)
    assert parse_strategy("p=0.6,mode=mc,seed=3") == PAccurate(0.6, 3, "monte-carlo")
    with pytest.raises(ValueError):
        parse_strategy("p=1.5")
    with pytest.raises(ValueError):
        parse_strategy("random")


def _energy_record(qid, tin, tout, joules, model="m"):
    return ProfilingRecord(qid, "d", model, "h", tin, tout, 1.0, joules, Stats(1, 1, 1, 1))


def test_energy_fit_and_profiles():
    recs = [_energy_record(f"q{i}", tin, tout, 5.0 + 0.01 * tin + 0.1 * tout) for i, (tin, tout) in enumerate([(10, 5), (100, 50), (30, 200), (7, 70)])]
    fit = fit_energy_model(recs)
    assert fit.intercept == pytest.approx(5.0) and fit.per_input == pytest.approx(0.01) and fit.per_output == pytest.approx(0.1)
    profiles = profiles_from_records(recs, {"m": 4e9}, load_pricing(), cloud_models=[])
    p = profiles["m"]
    assert p.location == LOCAL
    assert p.energy_j(row(0, set(), 10, 5)) == recs[0].per_query_joules  # measured wins
    unseen = TraceRow(T0, "new", 200, 100, frozenset())
    assert p.energy_j(unseen) == pytest.approx(5.0 + 2.0 + 10.0)


def test_synthesize_trace():
    kw = dict(local_models=["s", "m", "l"], cloud_model="c", serviceable_fraction=0.807, arrival="uniform")
    trace = synthesize_trace(1000 / 3600, 3600.0, seed=11, **kw)
    assert len(trace) == 1000
    assert abs(trace.summary(["s", "m", "l"]).serviceable_fraction - 0.807) <= 0.03
    assert trace_to_csv(trace) == trace_to_csv(synthesize_trace(1000 / 3600, 3600.0, seed=11, **kw))
    assert len(synthesize_trace(1.0, 0.0, seed=1, **kw)) == 0
    for r in trace:
        assert "c" in r.capable
        if "s" in r.capable:
            assert {"m", "l"} <= r.capable  # nested capability
    with pytest.raises(ValueError):
        synthesize_trace(0.0, 10.0, seed=1, **kw)
