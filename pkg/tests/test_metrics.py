from __future__ import annotations

import itertools
import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ipw.errors import CategoryMismatch, MetricError, MissingField
from ipw.metrics import (
    GdpTable,
    accuracy_per_joule,
    accuracy_per_watt,
    correctness_matrix,
    coverage,
    difficulty_histogram,
    difficulty_label,
    difficulty_labels,
    efficiency_report,
    gdp_weighted_accuracy,
    load_gdp_table,
    load_param_registry,
    mean_ci,
    per_category_accuracy,
    perplexity_from_logprobs,
    perplexity_per_joule,
    perplexity_per_watt,
    yoy_gains,
)
from ipw.orchestrator import Stats
from ipw.records import CATEGORIES, ProfilingRecord


def rec(acc=None, watts=100.0, joules=100.0, ppl=None, qid="q", model="m", category=None):
    return ProfilingRecord(
        query_id=qid,
        dataset_tag="d",
        model_id=model,
        hardware_id="h",
        input=1,
        output=1,
        total_query_seconds=1.0,
        per_query_joules=joules,
        per_query_watts=Stats(watts, watts, watts, watts),
        success=acc,
        perplexity=ppl,
        category=category,
    )


def test_apw_examples():
    rs = [rec(a) for a in (True, False, True, False)]
    assert accuracy_per_watt(rs) == 5.0e-3
    assert accuracy_per_watt([rec(True, watts=200.0)]) == 5.0e-3


def test_apw_from_table_means():
    # 0.713 accuracy at 170.6 W mean power
    rs = [rec(i < 713, watts=170.6) for i in range(1000)]
    assert accuracy_per_watt(rs) == pytest.approx(4.18e-3, abs=1e-6)


def test_apj_examples():
    assert accuracy_per_joule([rec(True, joules=1000.0), rec(False, joules=1000.0)]) == 5.0e-4
    assert accuracy_per_joule([rec(False, joules=5.0), rec(False, joules=7.0)]) == 0.0


def test_apj_matches_brute_force():
    rnd = random.Random(0)
    rs = [rec(rnd.random() < 0.6, joules=rnd.uniform(1, 500)) for _ in range(100)]
    acc = sum(1.0 if r.success else 0.0 for r in rs) / len(rs)
    energy = sum(r.per_query_joules for r in rs) / len(rs)
    assert accuracy_per_joule(rs) == pytest.approx(acc / energy, rel=1e-12)


def test_ratio_of_means_not_mean_of_ratios():
    rs = [rec(True, watts=100.0), rec(True, watts=300.0)]
    assert accuracy_per_watt(rs) == pytest.approx(1 / 200)
    assert accuracy_per_watt(rs) != pytest.approx((1 / 100 + 1 / 300) / 2)


def test_errors():
    with pytest.raises(MetricError):
        accuracy_per_watt([])
    with pytest.raises(MissingField):
        accuracy_per_watt([rec(True), rec(None)])


def test_perplexity_metrics():
    assert perplexity_per_watt([rec(ppl=2.0), rec(ppl=2.0)]).value == 5.0e-3
    assert perplexity_per_joule([rec(ppl=1.0, joules=1.0)]).value == 1.0


def test_perplexity_missing_policy():
    rs = [rec(ppl=2.0), rec(ppl=None), rec(ppl=4.0, watts=300.0)]
    strict = perplexity_per_watt(rs)
    assert strict.value is None and strict.excluded == 1
    sub = perplexity_per_watt(rs, subset=True)
    assert sub.excluded == 1 and sub.n == 2
    assert sub.value == pytest.approx(1 / (3.0 * 200.0))


def test_perplexity_from_logprobs():
    assert perplexity_from_logprobs([-math.log(2), -math.log(2)]) == pytest.approx(2.0)
    assert perplexity_from_logprobs([0.0]) == 1.0
    rnd = random.Random(1)
    lps = [-rnd.uniform(0, 3) for _ in range(50)]
    brute = math.prod(math.exp(lp) for lp in lps) ** (-1 / len(lps))
    assert perplexity_from_logprobs(lps) == pytest.approx(brute, rel=1e-9)
    with pytest.raises(ValueError):
        perplexity_from_logprobs([])
    with pytest.raises(ValueError):
        perplexity_from_logprobs([0.1])


@given(st.floats(0.01, 100))
def test_scale_covariance(k):
    rs = [rec(i % 3 == 0, watts=50.0 + i, joules=10.0 * i + 1, ppl=1.0 + i) for i in range(10)]
    scaled = [rec(r.success, watts=r.per_query_watts.avg * k, joules=r.per_query_joules * k, ppl=r.perplexity) for r in rs]
    assert accuracy_per_watt(scaled) == pytest.approx(accuracy_per_watt(rs) / k, rel=1e-12)
    assert accuracy_per_joule(scaled) == pytest.approx(accuracy_per_joule(rs) / k, rel=1e-12)
    assert perplexity_per_watt(scaled).value == pytest.approx(perplexity_per_watt(rs).value / k, rel=1e-12)
    assert perplexity_per_joule(scaled).value == pytest.approx(perplexity_per_joule(rs).value / k, rel=1e-12)


def test_efficiency_report():
    rs = [rec(i < 3, watts=100.0 + i, joules=200.0, ppl=2.0 if i else None) for i in range(4)]
    rep = efficiency_report(rs)
    assert rep.apw == rep.mean_accuracy / rep.mean_power_watts
    assert rep.apj == rep.mean_accuracy / rep.mean_energy_joules
    assert rep.perplexity_excluded == 1 and rep.ppw is not None
    assert set(rep.ci95) == {"mean_accuracy", "mean_power_watts", "mean_energy_joules", "mean_perplexity"}
    unlabeled = efficiency_report([rec(None), rec(None)])
    assert unlabeled.apw is None and unlabeled.ppw is None


def test_mean_ci():
    assert mean_ci([0, 1, 1, 1]).mean == 0.75
    assert mean_ci([3.0] * 10).half_width == 0.0
    one = mean_ci([5.0])
    assert one.half_width == 0.0 and one.single
    rnd = random.Random(2)
    draws = [float(rnd.random() < 0.5) for _ in range(1000)]
    expected = 1.96 * 0.5 / math.sqrt(1000)
    assert abs(mean_ci(draws).half_width - expected) <= 0.2 * expected
    boot = mean_ci(draws, method="bootstrap", seed=3)
    assert boot == mean_ci(draws, method="bootstrap", seed=3)
    assert abs(boot.half_width - expected) <= 0.2 * expected


# coverage

def test_coverage_examples():
    m = {
        "M1": {"q1": True, "q2": False, "q3": False, "q4": False},
        "M2": {"q1": False, "q2": True, "q3": False, "q4": False},
        "M3": {"q1": False, "q2": False, "q3": False, "q4": False},
    }
    assert coverage(m, ["M1", "M2", "M3"]) == 0.5
    assert coverage(m, ["M1"]) == 0.25
    with pytest.raises(MetricError):
        coverage(m, [])


def test_coverage_random_matrix_and_monotone():
    rnd = random.Random(4)
    queries = [f"q{i}" for i in range(8)]
    m = {f"M{j}": {q: rnd.random() < 0.3 for q in queries} for j in range(5)}
    models = sorted(m)
    union = {q for j in models for q in queries if m[j][q]}
    assert coverage(m, models) == len(union) / len(queries)
    for r in range(1, len(models)):
        for subset in itertools.combinations(models, r):
            for extra in set(models) - set(subset):
                assert coverage(m, list(subset) + [extra]) >= coverage(m, list(subset))


def test_coverage_incomplete_matrix():
    with pytest.raises(MetricError):
        coverage({"a": {"q1": True}, "b": {"q2": True}}, ["a", "b"])


def test_correctness_matrix_from_records():
    rs = [rec(True, qid="q1", model="a"), rec(False, qid="q2", model="a"), rec(None, qid="q3", model="a")]
    assert correctness_matrix(rs) == {"a": {"q1": True, "q2": False}}


# difficulty

def test_difficulty_examples():
    assert difficulty_label([("qwen3-14b", 14e9), ("qwen3-32b", 32e9)]) == 3
    assert difficulty_label([("qwen3-4b", 4e9)]) == 1
    assert difficulty_label([]) == 5
    assert difficulty_label([("a", 8e9)]) == 2
    assert difficulty_label([("a", 100e9)]) == 4
    assert difficulty_label([("frontier", 1e12)]) == 4


def test_difficulty_partition():
    rnd = random.Random(5)
    params = {"a": 4e9, "b": 8e9, "c": 14e9, "d": 120e9}
    queries = [f"q{i}" for i in range(50)]
    m = {k: {q: rnd.random() < 0.3 for q in queries} for k in params}
    labels = difficulty_labels(m, params)
    hist = difficulty_histogram(labels)
    assert sum(hist.values()) == len(queries)
    for q, level in labels.items():
        assert (level == 5) == (not any(m[k][q] for k in params))
    with pytest.raises(MissingField):
        difficulty_labels(m, {"a": 4e9})


def test_param_registry(tmp_path):
    (tmp_path / "p.csv").write_text("model_id,active_params\nqwen3-4b,4e9\ngpt-oss-20b,3.6e9\n")
    assert load_param_registry(tmp_path / "p.csv") == {"qwen3-4b": 4e9, "gpt-oss-20b": 3.6e9}


# GDP

def test_gdp_examples():
    a, b = CATEGORIES[:2]
    table = GdpTable({a: 1.0, b: 3.0})
    weighted, addressable = gdp_weighted_accuracy({a: 0.5, b: 0.9}, table)
    assert weighted == pytest.approx(0.8) and addressable == pytest.approx(3.2)
    assert table.total_gdp_trillions == 29.18


def test_gdp_uniform_accuracy():
    rnd = random.Random(6)
    table = GdpTable({c: rnd.uniform(0, 3) for c in CATEGORIES})
    weighted, _ = gdp_weighted_accuracy({c: 0.37 for c in CATEGORIES}, table)
    assert weighted == pytest.approx(0.37, rel=1e-12)


def test_gdp_errors(tmp_path):
    with pytest.raises(CategoryMismatch):
        gdp_weighted_accuracy({"Law stuff": 1.0}, GdpTable({"Legal services": 1.0}))
    with pytest.raises(CategoryMismatch):
        GdpTable({"Law stuff": 1.0})
    with pytest.raises(ValueError):
        GdpTable({"Legal services": -1.0})
    (tmp_path / "g.csv").write_text("category,gdp_trillions\nLegal services,0.4\nNone,0\n")
    assert load_gdp_table(tmp_path / "g.csv").gdp == {"Legal services": 0.4, "None": 0.0}


def test_per_category_accuracy():
    rs = [rec(True, category="Legal services"), rec(False, category="Legal services"), rec(True, category="None")]
    assert per_category_accuracy(rs) == {"Legal services": 0.5, "None": 1.0}


# longitudinal

def test_yoy():
    ratios, total = yoy_gains([("2023", 7.92e-4), ("2024", 1.80e-3), ("2025", 4.18e-3)])
    assert [label for label, _ in ratios] == ["2024", "2025"]
    assert ratios[0][1] == pytest.approx(2.27, abs=0.01)
    assert ratios[1][1] == pytest.approx(2.32, abs=0.01)
    assert total == pytest.approx(5.28, abs=0.05)
    assert yoy_gains([("a", 1), ("b", 1)])[1] == 1
    assert yoy_gains([("a", 2), ("b", 1)])[0][0][1] == 0.5
    with pytest.raises(ValueError):
        yoy_gains([("a", 0), ("b", 1)])
    with pytest.raises(ValueError):
        yoy_gains([("a", 1)])
