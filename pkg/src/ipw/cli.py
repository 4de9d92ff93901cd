"""``ipw`` command line: profile, evaluate, analyze, simulate, report.

Configuration comes from a JSON file, then ``IPW_*`` environment variables,
then flags (later wins). Every output embeds the resolved configuration and
a SHA-256 over the input files it was computed from.

Exit codes::

    0  success
    1  other failure (telemetry, malformed data)
    2  configuration or usage error
    3  endpoint failure
    4  partial scoring (some records left unscored)
    5  missing inputs
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

from ipw import __version__
from ipw.clock import SystemClock, VirtualClock
from ipw.endpoint import ChatClient, EndpointConfig
from ipw.errors import (
    EndpointError,
    IPWError,
    IngestError,
    MetricError,
    PartialProfileFailure,
    TelemetryError,
    Unscored,
)
from ipw.evaluation import judge_local_vs_reference, judge_reference, map_judged, score_multiple_choice
from ipw.metrics import (
    correctness_matrix,
    coverage,
    difficulty_histogram,
    difficulty_labels,
    efficiency_report,
    gdp_weighted_accuracy,
    group_records,
    load_gdp_table,
    load_param_registry,
    per_category_accuracy,
    perplexity_from_logprobs,
    yoy_gains,
)
from ipw.orchestrator import GenerationResult, QueryProfile, QuerySpec, profile_query
from ipw.records import (
    IngestOptions,
    ProfilingRecord,
    host_metadata,
    ingest_queries,
    read_records,
    write_records,
)
from ipw.routing import (
    ModelProfile,
    Pool,
    load_pricing,
    parse_strategy,
    profiles_from_records,
    simulate,
    synthesize_trace,
)
from ipw.telemetry import Sampler, open_backend, parse_backend
from ipw.workload import validate_trace

log = logging.getLogger("ipw")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ENDPOINT, EXIT_PARTIAL, EXIT_MISSING = 0, 1, 2, 3, 4, 5

RECORDS_FILE = "records.jsonl"
LABELED_FILE = "records.labeled.jsonl"
PARTIAL_FILE = "records.partial.jsonl"
ANALYSIS_FILE = "analysis.json"
SIM_SUMMARY_FILE = "simulation_summary.json"
SIM_SERIES_FILE = "simulation_series.csv"
REPORT_FILE = "report.md"


class ConfigError(IPWError):
    pass


class MissingInput(IPWError):
    pass


@dataclass
class RunConfig:
    subcommand: str = ""
    # inference endpoint; the key is read from the named environment variable
    endpoint: str | None = None
    model: str = "default"
    api_key_env: str = "OPENAI_API_KEY"
    logprobs: bool = False
    judge_endpoint: str | None = None
    judge_model: str = "judge"
    judge_api_key_env: str = "OPENAI_API_KEY"
    judge_workers: int = 1
    judge_rate_per_s: float | None = None
    # telemetry
    backend: str | None = None
    interval_ms: float = 50.0
    repeats: int = 10
    cooldown_s: float = 0.25
    hardware_id: str = "unknown"
    active_params: float | None = None
    # data
    dataset: str | None = None
    dataset_tag: str = "dataset"
    require_ground_truth: bool = False
    records: list[str] = field(default_factory=list)
    eval_mode: str = "mc"  # mc | reference | pairwise
    reference_records: str | None = None
    # analysis
    subsets: list[list[str]] = field(default_factory=list)
    param_registry: str | None = None
    gdp_table: str | None = None
    eras: list[list[Any]] = field(default_factory=list)  # [label, apw value or record file]
    # simulation
    trace: str | None = None
    overrides: str | None = None
    synthetic_trace: dict | None = None
    pricing: str | None = None
    pool: list[dict] = field(default_factory=list)
    baseline: str | None = None
    strategies: list[str] = field(default_factory=list)
    resolution_s: float | None = None
    # output and limits
    out: str = "out"
    seed: int = 0
    max_queries: int | None = None
    timeout_s: float = 600.0

    def to_dict(self) -> dict:
        return asdict(self)


_FIELDS = {f.name: f for f in fields(RunConfig)}
_INT = {"judge_workers", "repeats", "seed", "max_queries"}
_FLOAT = {"judge_rate_per_s", "interval_ms", "cooldown_s", "active_params", "resolution_s", "timeout_s"}
_BOOL = {"logprobs", "require_ground_truth"}
_JSON = {"records", "subsets", "eras", "synthetic_trace", "pool", "strategies"}


def _coerce(name: str, raw: str) -> Any:
    if name in _INT:
        return int(raw)
    if name in _FLOAT:
        return float(raw)
    if name in _BOOL:
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if name in _JSON:
        return json.loads(raw)
    return raw


def resolve_config(
    subcommand: str,
    flags: dict[str, Any],
    config_path: str | None = None,
    env: dict[str, str] | None = None,
) -> RunConfig:
    """Defaults < config file < ``IPW_<FIELD>`` environment < flags."""
    env = os.environ if env is None else env
    values: dict[str, Any] = {}
    if config_path:
        try:
            data = json.loads(Path(config_path).read_text())
        except OSError as exc:
            raise MissingInput(f"cannot read config {config_path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {config_path} is not valid JSON: {exc}") from exc
        unknown = sorted(set(data) - set(_FIELDS))
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        values.update(data)
    for name in _FIELDS:
        key = "IPW_" + name.upper()
        if key in env:
            try:
                values[name] = _coerce(name, env[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from exc
    values.update({k: v for k, v in flags.items() if v is not None})
    values["subcommand"] = subcommand
    cfg = RunConfig(**values)
    if cfg.repeats < 1:
        raise ConfigError("repeats must be >= 1")
    if cfg.interval_ms <= 0:
        raise ConfigError("interval_ms must be positive")
    return cfg


# provenance ------------------------------------------------------------------

def _scheme_path(value: str | None, scheme: str) -> str | None:
    if value and value.startswith(scheme + ":"):
        return value[len(scheme) + 1 :]
    return None


def input_paths(cfg: RunConfig) -> list[str]:
    paths = [
        cfg.dataset,
        cfg.reference_records,
        cfg.trace,
        cfg.overrides,
        cfg.pricing,
        cfg.param_registry,
        cfg.gdp_table,
        _scheme_path(cfg.endpoint, "mock"),
        _scheme_path(cfg.judge_endpoint, "mock"),
        _scheme_path(cfg.backend, "replay"),
        *cfg.records,
        *(str(e[1]) for e in cfg.eras if isinstance(e[1], str)),
    ]
    return sorted({p for p in paths if p})


def hash_inputs(paths: Sequence[str | Path]) -> str:
    h = hashlib.sha256()
    for p in sorted(str(p) for p in paths):
        path = Path(p)
        h.update(path.name.encode() + b"\0")
        h.update(hashlib.sha256(path.read_bytes()).digest() if path.is_file() else b"absent")
    return h.hexdigest()


def provenance(cfg: RunConfig, extra_inputs: Sequence[str | Path] = ()) -> dict:
    return {
        "harness_version": __version__,
        "config": cfg.to_dict(),
        "inputs_sha256": hash_inputs([*input_paths(cfg), *extra_inputs]),
    }


def _dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_csv(path: Path, rows: list[dict], prov: dict, columns: Sequence[str] | None = None) -> None:
    """CSV with a single ``# provenance`` comment line ahead of the header."""
    buf = io.StringIO()
    buf.write("# provenance: " + json.dumps(prov, sort_keys=True, separators=(",", ":")) + "\n")
    cols = list(columns or (rows[0] if rows else []))
    writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    writer.writerows(rows)
    _atomic_write(path, buf.getvalue())


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_file(path: str | None, what: str) -> Path:
    if not path:
        raise ConfigError(f"{what} not configured")
    p = Path(path)
    if not p.is_file():
        raise MissingInput(f"{what} not found: {path}")
    return p


def _is_virtual(cfg: RunConfig) -> bool:
    return bool(_scheme_path(cfg.endpoint, "mock") or _scheme_path(cfg.backend, "replay"))


# profile ---------------------------------------------------------------------

def build_record(cfg: RunConfig, q: QuerySpec, result: GenerationResult, prof: QueryProfile, error_band, host) -> ProfilingRecord:
    if prof.per_query_watts is None:
        raise TelemetryError("backend reported no power readings inside the query window")
    ppl = None
    if result.token_logprobs:
        ppl = perplexity_from_logprobs(result.token_logprobs)
    return ProfilingRecord(
        query_id=q.query_id,
        dataset_tag=q.dataset_tag,
        model_id=cfg.model,
        hardware_id=cfg.hardware_id,
        input=result.input_tokens,
        output=result.output_tokens,
        total_query_seconds=result.total_s,
        per_query_joules=prof.per_query_joules,
        per_query_watts=prof.per_query_watts,
        time_to_first_token_seconds=result.ttft_s,
        per_token_ms=result.per_token_ms,
        throughput_tokens_per_sec=result.throughput_tokens_per_sec,
        tokens_approx=result.tokens_approx,
        joules_std=prof.joules_std,
        energy_source=prof.energy_source,
        integrated_joules=prof.integrated_joules,
        counter_joules=prof.counter_joules,
        error_band=error_band,
        gpu_mb=prof.gpu_mb,
        cpu_mb=prof.cpu_mb,
        temperature=prof.temperature,
        flops_per_request=prof.flops_per_request,
        macs_per_request=None if prof.flops_per_request is None else prof.flops_per_request / 2,
        perplexity=ppl,
        category=q.category,
        response=result.output_text,
        decoding=asdict(q.decoding),
        thinking_enabled=q.thinking_enabled,
        host=host,
        repeats=prof.repeats,
    )


def cmd_profile(cfg: RunConfig) -> int:
    dataset = _require_file(cfg.dataset, "dataset")
    if not cfg.endpoint:
        raise ConfigError("endpoint not configured")
    if not cfg.backend:
        raise ConfigError("telemetry backend not configured")
    if _scheme_path(cfg.backend, "replay") and not _scheme_path(cfg.endpoint, "mock"):
        raise ConfigError("replay telemetry needs a mock endpoint (both run on a virtual clock)")
    for p in (_scheme_path(cfg.endpoint, "mock"), _scheme_path(cfg.backend, "replay")):
        if p:
            _require_file(p, "input")

    queries = ingest_queries(dataset, cfg.dataset_tag, IngestOptions(require_ground_truth=cfg.require_ground_truth))
    if cfg.max_queries is not None:
        queries = queries[: cfg.max_queries]
    descriptor = parse_backend(cfg.backend)
    clock = VirtualClock() if _is_virtual(cfg) else SystemClock()
    client = ChatClient(
        EndpointConfig(cfg.endpoint, cfg.model, cfg.api_key_env, cfg.timeout_s, logprobs=cfg.logprobs), clock
    )
    out = _out_dir(cfg)
    prov = provenance(cfg)
    host = host_metadata()
    records: list[ProfilingRecord] = []
    sampler = Sampler(open_backend(descriptor), cfg.interval_ms, clock).start()
    try:
        for i, q in enumerate(queries):
            if i:
                clock.sleep(cfg.cooldown_s)
            result, prof = profile_query(client, q, sampler, cfg.repeats, cfg.cooldown_s, cfg.active_params)
            records.append(build_record(cfg, q, result, prof, descriptor.error_band, host))
            print(f"[{i + 1}/{len(queries)}] {q.query_id}: {prof.per_query_joules:.3f} J", file=sys.stderr)
    except IPWError:
        if records:
            write_records(records, out / PARTIAL_FILE, meta=prov | {"complete": False})
            print(f"partial results for {len(records)} queries kept in {out / PARTIAL_FILE}", file=sys.stderr)
        raise
    finally:
        sampler.stop()
        client.close()

    write_records(records, out / RECORDS_FILE, meta=prov)
    n = len(records)
    mean_j = sum(r.per_query_joules for r in records) / n if n else 0.0
    ttfts = [r.time_to_first_token_seconds for r in records if r.time_to_first_token_seconds is not None]
    mean_ttft = f"{sum(ttfts) / len(ttfts):.3f} s" if ttfts else "n/a"
    print(f"profiled n={n} mean_joules={mean_j:.3f} mean_ttft={mean_ttft} -> {out / RECORDS_FILE}")
    return EXIT_OK


# evaluate --------------------------------------------------------------------

def _load_records(cfg: RunConfig, default: str) -> list[ProfilingRecord]:
    paths = cfg.records or [str(Path(cfg.out) / default)]
    out = []
    for p in paths:
        out.extend(read_records(_require_file(p, "record file")))
    return out


def _judge_client(cfg: RunConfig) -> ChatClient:
    if not cfg.judge_endpoint:
        raise ConfigError("judge endpoint not configured")
    mock = _scheme_path(cfg.judge_endpoint, "mock")
    if mock:
        _require_file(mock, "judge mock script")
    clock = VirtualClock() if mock else SystemClock()
    return ChatClient(
        EndpointConfig(cfg.judge_endpoint, cfg.judge_model, cfg.judge_api_key_env, cfg.timeout_s, stream=False), clock
    )


def cmd_evaluate(cfg: RunConfig) -> int:
    records = _load_records(cfg, RECORDS_FILE)
    if cfg.eval_mode not in ("mc", "reference", "pairwise"):
        raise ConfigError(f"unknown eval_mode {cfg.eval_mode!r}")
    questions: dict[str, QuerySpec] = {}
    if cfg.dataset:
        questions = {q.query_id: q for q in ingest_queries(_require_file(cfg.dataset, "dataset"), cfg.dataset_tag)}

    def labelled(rec: ProfilingRecord, success: bool, correctness: dict, unparsed: bool = False) -> ProfilingRecord:
        return ProfilingRecord.from_dict(rec.to_dict() | {"success": success, "unparsed": unparsed, "correctness": correctness})

    def unscored(rec: ProfilingRecord, error: str) -> ProfilingRecord:
        return ProfilingRecord.from_dict(rec.to_dict() | {"success": None, "correctness": {"error": error}})

    out_records: list[ProfilingRecord] = []
    if cfg.eval_mode == "mc":
        missing = [r.query_id for r in records if not (questions.get(r.query_id) and questions[r.query_id].reference)]
        if missing:
            raise MissingInput(f"no reference answers for {missing[:5]}{'...' if len(missing) > 5 else ''}")
        for rec in records:
            score = score_multiple_choice(rec.response or "", questions[rec.query_id].reference)
            out_records.append(
                labelled(rec, score.correct, {"method": "mc-exact", "letter": score.letter}, score.unparsed)
            )
    else:
        judge = _judge_client(cfg)
        if cfg.eval_mode == "reference":
            missing = [r.query_id for r in records if not (questions.get(r.query_id) and questions[r.query_id].reference)]
            if missing:
                raise MissingInput(f"no reference answers for {missing[:5]}")

            def call(rec: ProfilingRecord) -> ProfilingRecord:
                q = questions[rec.query_id]
                ok = judge_reference(q.prompt, rec.response or "", q.reference, judge)
                return labelled(rec, ok, {"method": "judge-reference", "judge_model_id": judge.config.model})

        else:
            refs = {r.query_id: r.response for r in read_records(_require_file(cfg.reference_records, "reference records"))}
            missing = [r.query_id for r in records if r.query_id not in refs or r.query_id not in questions]
            if missing:
                raise MissingInput(f"no reference response or prompt for {missing[:5]}")

            def call(rec: ProfilingRecord) -> ProfilingRecord:
                label = judge_local_vs_reference(
                    rec.query_id, rec.model_id, questions[rec.query_id].prompt, rec.response or "", refs[rec.query_id] or "", judge
                )
                info = {k: v for k, v in asdict(label).items() if k not in ("query_id", "model_id", "success")}
                return labelled(rec, label.success, info)

        results = map_judged(call, records, max_workers=cfg.judge_workers, max_per_second=cfg.judge_rate_per_s)
        for rec, res in zip(records, results):
            if isinstance(res, (Unscored, EndpointError)):
                out_records.append(unscored(rec, str(res)))
            elif isinstance(res, Exception):
                raise res
            else:
                out_records.append(res)
        judge.close()

    out = _out_dir(cfg)
    write_records(out_records, out / LABELED_FILE, meta=provenance(cfg))
    n_unscored = sum(1 for r in out_records if r.success is None)
    print(f"scored={len(out_records) - n_unscored} unscored={n_unscored} -> {out / LABELED_FILE}")
    return EXIT_PARTIAL if n_unscored else EXIT_OK


# analyze ---------------------------------------------------------------------

def _era_value(cfg: RunConfig, value: Any) -> float:
    if isinstance(value, (int, float)):
        return float(value)
    rep = efficiency_report(read_records(_require_file(str(value), "era record file")))
    if rep.apw is None:
        raise MetricError(f"era records {value} carry no correctness labels")
    return rep.apw


def analyze_records(cfg: RunConfig, records: list[ProfilingRecord]) -> dict:
    if not records:
        raise MetricError("no records to analyze")
    result: dict[str, Any] = {"efficiency": [], "coverage": [], "difficulty": None, "gdp": [], "yoy": None, "errors": []}
    for (model, hw), group in group_records(records).items():
        rep = efficiency_report(group, seed=cfg.seed)
        result["efficiency"].append({"model_id": model, "hardware_id": hw, **rep.as_row()})

    matrix = correctness_matrix(records)
    models = sorted(matrix)
    subsets = cfg.subsets or ([[m] for m in models] + ([models] if len(models) > 1 else []))
    for subset in subsets:
        try:
            result["coverage"].append({"subset": "+".join(subset), "coverage": coverage(matrix, subset)})
        except MetricError as exc:
            result["errors"].append(f"coverage {'+'.join(subset)}: {exc}")

    if cfg.param_registry:
        params = load_param_registry(_require_file(cfg.param_registry, "parameter registry"))
        try:
            labels = difficulty_labels(matrix, params)
            result["difficulty"] = {str(k): v for k, v in difficulty_histogram(labels).items()}
        except (MetricError, IPWError) as exc:
            result["errors"].append(f"difficulty: {exc}")

    if cfg.gdp_table:
        table = load_gdp_table(_require_file(cfg.gdp_table, "GDP table"))
        for model in models:
            acc = per_category_accuracy(r for r in records if r.model_id == model)
            if not acc:
                continue
            try:
                weighted, addressable = gdp_weighted_accuracy(acc, table)
                result["gdp"].append({"model_id": model, "weighted_accuracy": weighted, "addressable_gdp_trillions": addressable})
            except IPWError as exc:
                result["errors"].append(f"gdp {model}: {exc}")

    if len(cfg.eras) >= 2:
        series = [(str(label), _era_value(cfg, value)) for label, value in cfg.eras]
        ratios, total = yoy_gains(series)
        result["yoy"] = {
            "series": [{"label": lab, "apw": v} for lab, v in series],
            "ratios": [{"label": lab, "ratio": r} for lab, r in ratios],
            "cumulative": total,
        }
    return result


def cmd_analyze(cfg: RunConfig) -> int:
    default = LABELED_FILE if (Path(cfg.out) / LABELED_FILE).exists() else RECORDS_FILE
    records = _load_records(cfg, default)
    result = analyze_records(cfg, records)
    extra = [] if cfg.records else [Path(cfg.out) / default]
    prov = provenance(cfg, extra)
    out = _out_dir(cfg)
    write_csv(out / "efficiency.csv", result["efficiency"], prov)
    write_csv(out / "coverage.csv", result["coverage"], prov, ["subset", "coverage"])
    if result["difficulty"] is not None:
        rows = [{"level": k, "count": v} for k, v in result["difficulty"].items()]
        write_csv(out / "difficulty.csv", rows, prov, ["level", "count"])
    if result["gdp"]:
        write_csv(out / "gdp.csv", result["gdp"], prov)
    if result["yoy"] is not None:
        write_csv(out / "yoy.csv", result["yoy"]["ratios"], prov, ["label", "ratio"])
    _atomic_write(out / ANALYSIS_FILE, _dump_json({"provenance": prov, **result}))
    for row in result["efficiency"]:
        print(f"{row['model_id']} on {row['hardware_id']}: apw={row['apw']} apj={row['apj']} n={row['n']}")
    for err in result["errors"]:
        print(f"warning: {err}", file=sys.stderr)
    return EXIT_OK


# simulate --------------------------------------------------------------------

def _build_pool(cfg: RunConfig) -> Pool:
    pricing = load_pricing(_require_file(cfg.pricing, "pricing table") if cfg.pricing else None)
    profiles: dict[str, ModelProfile] = {}
    if cfg.records:
        params = load_param_registry(_require_file(cfg.param_registry, "parameter registry"))
        cloud = [p["model_id"] for p in cfg.pool if p.get("location") == "cloud"]
        profiles.update(profiles_from_records(_load_records(cfg, RECORDS_FILE), params, pricing, cloud))
    for spec in cfg.pool:
        spec = dict(spec)
        model = spec.pop("model_id")
        price_id = spec.pop("pricing_id", model)
        if model in profiles:
            continue
        profiles[model] = ModelProfile(model_id=model, pricing=pricing.get(price_id), **spec)
    if not cfg.baseline:
        raise ConfigError("baseline model not configured")
    return Pool(profiles, cfg.baseline)


def cmd_simulate(cfg: RunConfig) -> int:
    if not cfg.strategies:
        raise ConfigError("no routing strategies given (use --strategy)")
    strategies = [parse_strategy(s, cfg.seed) for s in cfg.strategies]
    pool = _build_pool(cfg)
    local = [m for m, p in pool.profiles.items() if p.location == "local"]
    if cfg.trace:
        trace = validate_trace(_require_file(cfg.trace, "trace"), pool.profiles, local, cfg.overrides)
    elif cfg.synthetic_trace:
        opts = {"seed": cfg.seed, "local_models": sorted(local, key=lambda m: pool.profiles[m].active_params), "cloud_model": pool.baseline}
        trace = synthesize_trace(**(opts | cfg.synthetic_trace))
    else:
        raise ConfigError("no trace configured")
    report = simulate(trace, strategies, pool)
    prov = provenance(cfg)
    out = _out_dir(cfg)
    write_csv(out / SIM_SERIES_FILE, report.series(cfg.resolution_s), prov, ["strategy", "t_s", "energy_j", "flops", "cost_usd"])
    summary = {"provenance": prov, "trace": str(trace.summary(local)), **report.summary()}
    _atomic_write(out / SIM_SUMMARY_FILE, _dump_json(summary))
    for name, sv in report.savings.items():
        print(f"{name}: " + " ".join(f"{k}={'undefined' if v is None else f'{v:.4f}'}" for k, v in sv.items()))
    if report.flags:
        print(f"warning: {len(report.flags)} (query, resource) pairs where local costs more than cloud", file=sys.stderr)
    return EXIT_OK


# report ----------------------------------------------------------------------

METRIC_TABLES = (
    ("Accuracy per watt", "apw", "1/W"),
    ("Accuracy per joule", "apj", "1/J"),
    ("Perplexity per watt", "ppw", "1/W"),
    ("Perplexity per joule", "ppj", "1/J"),
)


def _fmt(v: Any) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def _table(headers: Sequence[str], rows: Sequence[Sequence[Any]]) -> list[str]:
    lines = ["| " + " | ".join(headers) + " |", "|" + "---|" * len(headers)]
    lines += ["| " + " | ".join(_fmt(c) for c in row) + " |" for row in rows]
    return lines


def render_report(cfg: RunConfig, analysis: dict | None, sim: dict | None, prov: dict) -> str:
    lines = ["# Intelligence-per-watt report", ""]
    lines += ["## Provenance", "", f"- harness version: {prov['harness_version']}", f"- inputs sha256: `{prov['inputs_sha256']}`"]
    if analysis is not None:
        bands = sorted({row["error_band"] for row in analysis["efficiency"] if row.get("error_band") is not None})
        lines.append(f"- telemetry error band: {', '.join(f'±{b:.0%}' for b in bands) if bands else 'none recorded'}")
        lines.append(f"- analysis inputs sha256: `{analysis['provenance']['inputs_sha256']}`")
    if sim is not None:
        lines.append(f"- simulation inputs sha256: `{sim['provenance']['inputs_sha256']}`")
    lines += ["", "```json", json.dumps(prov["config"], indent=2, sort_keys=True), "```", ""]

    if analysis is None:
        lines += ["## Efficiency metrics", "", f"MISSING: `{ANALYSIS_FILE}` not found; run `ipw analyze` first.", ""]
    else:
        for title, key, unit in METRIC_TABLES:
            rows = []
            for r in analysis["efficiency"]:
                mean_key = "mean_accuracy" if key.startswith("a") else "mean_perplexity"
                rows.append([r["model_id"], r["hardware_id"], r[key], r.get(f"{mean_key}_ci95"), r["n"]])
            lines += [f"## {title} ({unit})", ""]
            lines += _table(["model", "hardware", key.upper(), f"{'accuracy' if key.startswith('a') else 'perplexity'} CI95 ±", "n"], rows)
            if key.startswith("p"):
                excluded = sum(r["perplexity_excluded"] for r in analysis["efficiency"])
                lines.append("")
                lines.append(f"Records without perplexity excluded: {excluded}.")
            lines.append("")
        lines += ["## Coverage", ""]
        lines += _table(["subset", "coverage"], [[c["subset"], c["coverage"]] for c in analysis["coverage"]]) if analysis["coverage"] else ["MISSING: no correctness labels."]
        lines += ["", "## Difficulty", ""]
        if analysis["difficulty"] is None:
            lines.append("MISSING: no parameter registry configured.")
        else:
            lines += _table(["level", "queries"], sorted(analysis["difficulty"].items()))
        lines += ["", "## GDP-weighted accuracy", ""]
        if analysis["gdp"]:
            lines += _table(["model", "weighted accuracy", "addressable GDP (T USD)"], [[g["model_id"], g["weighted_accuracy"], g["addressable_gdp_trillions"]] for g in analysis["gdp"]])
        else:
            lines.append("MISSING: no GDP table configured or no categorized labels.")
        lines += ["", "## Year-over-year", ""]
        if analysis["yoy"] is None:
            lines.append("MISSING: fewer than two eras configured.")
        else:
            lines += _table(["step", "ratio"], [[r["label"], r["ratio"]] for r in analysis["yoy"]["ratios"]])
            lines += ["", f"Cumulative: {_fmt(analysis['yoy']['cumulative'])}x"]
        if analysis["errors"]:
            lines += ["", "Warnings:", ""] + [f"- {e}" for e in analysis["errors"]]
        plots = ["efficiency.csv", "coverage.csv"]
        plots += [f"{k}.csv" for k in ("difficulty", "gdp", "yoy") if analysis[k]]
        lines += ["", "Plot data: " + ", ".join(f"`{p}`" for p in plots) + ".", ""]

    lines += ["## Routing simulation", ""]
    if sim is None:
        lines.append(f"MISSING: `{SIM_SUMMARY_FILE}` not found; run `ipw simulate` first.")
    else:
        rows = []
        for name, s in sim["strategies"].items():
            sv = s["savings"]
            rows.append([name, s["totals"]["energy_j"], s["totals"]["flops"], s["totals"]["cost_usd"], sv["energy_j"], sv["flops"], sv["cost_usd"]])
        lines += [f"Trace: {sim['trace']}", ""]
        lines += _table(["strategy", "energy (J)", "FLOPs", "cost (USD)", "energy saved", "compute saved", "cost saved"], rows)
        if sim["local_costlier"]:
            lines += ["", f"Flagged: {len(sim['local_costlier'])} (query, resource) pairs where local costs more than cloud."]
        lines += ["", f"Plot data: `{SIM_SERIES_FILE}`."]
    lines.append("")
    return "\n".join(lines)


def cmd_report(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    inputs = [out / ANALYSIS_FILE, out / SIM_SUMMARY_FILE]
    analysis = json.loads(inputs[0].read_text()) if inputs[0].is_file() else None
    sim = json.loads(inputs[1].read_text()) if inputs[1].is_file() else None
    prov = provenance(cfg, inputs)
    _atomic_write(out / REPORT_FILE, render_report(cfg, analysis, sim, prov))
    missing = [p.name for p, v in zip(inputs, (analysis, sim)) if v is None]
    print(f"report -> {out / REPORT_FILE}" + (f" (missing: {', '.join(missing)})" if missing else ""))
    return EXIT_MISSING if len(missing) == len(inputs) else EXIT_OK


# argument parsing ------------------------------------------------------------

COMMANDS = {
    "profile": cmd_profile,
    "evaluate": cmd_evaluate,
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (keys as in RunConfig)")
    common.add_argument("--seed", type=int)
    common.add_argument("--interval-ms", type=float, dest="interval_ms")
    common.add_argument("--repeats", type=int)
    common.add_argument("--endpoint", help="OpenAI-compatible base URL, or mock:SCRIPT.json")
    common.add_argument("--backend", help="nvml | rocm-smi | powermetrics | replay:FILE.csv | synthetic:k=v,...")
    common.add_argument("--out", help="output directory")
    common.add_argument("--model")
    common.add_argument("--hardware-id", dest="hardware_id")
    common.add_argument("--dataset")
    common.add_argument("--dataset-tag", dest="dataset_tag")
    common.add_argument("--records", action="append", help="record file (repeatable)")
    common.add_argument("--mode", dest="eval_mode", choices=["mc", "reference", "pairwise"])
    common.add_argument("--judge-endpoint", dest="judge_endpoint")
    common.add_argument("--judge-model", dest="judge_model")
    common.add_argument("--reference-records", dest="reference_records")
    common.add_argument("--param-registry", dest="param_registry")
    common.add_argument("--gdp-table", dest="gdp_table")
    common.add_argument("--trace")
    common.add_argument("--pricing")
    common.add_argument("--baseline")
    common.add_argument("--strategy", action="append", dest="strategies", help="cloud-only | oracle | p=0.8[,mode=mc,seed=N]")
    common.add_argument("--resolution-s", type=float, dest="resolution_s")
    common.add_argument("--max-queries", type=int, dest="max_queries")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ipw", description="Intelligence-per-watt profiling harness")
    parser.add_argument("--version", action="version", version=f"ipw {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "profile": "run a dataset against an endpoint while sampling power",
        "evaluate": "attach correctness labels to profiled records",
        "analyze": "efficiency metrics, coverage, difficulty, GDP and YoY tables",
        "simulate": "replay a workload trace through routing strategies",
        "report": "assemble analysis and simulation outputs into markdown",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        cfg = resolve_config(args.command, flags, args.config)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingInput, FileNotFoundError) as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except PartialProfileFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT if isinstance(exc.cause, EndpointError) else EXIT_FAIL
    except EndpointError as exc:
        print(f"endpoint error: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT
    except IngestError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_MISSING if "cannot read" in str(exc) else EXIT_FAIL
    except (IPWError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
