"""Profiling-record schema and persistence, query ingestion, category labels.

Records are line-delimited JSON. A file may start with one ``{"_meta": ...}``
line carrying provenance; every other line is one record with a fixed key
order, so two runs that produce the same values produce the same bytes.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import platform
import random
from dataclasses import MISSING, dataclass, fields
from pathlib import Path
from typing import Any, Callable, Iterable

from ipw.endpoint import ChatClient, EndpointError
from ipw.errors import IngestError, LabelNotInVocabulary, SchemaViolation
from ipw.orchestrator import DecodingConfig, QuerySpec, Stats
from ipw import prompts

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
STATS_FIELDS = ("per_query_watts", "total_watts", "gpu_mb", "cpu_mb", "temperature")


@dataclass
class ProfilingRecord:
    """One (query, model, hardware) measurement.

    Units: tokens, seconds, milliseconds, joules, watts, megabytes, degrees C.
    """

    query_id: str
    dataset_tag: str
    model_id: str
    hardware_id: str
    input: int
    output: int
    total_query_seconds: float
    per_query_joules: float
    per_query_watts: Stats
    time_to_first_token_seconds: float | None = None
    per_token_ms: float | None = None
    throughput_tokens_per_sec: float | None = None
    tokens_approx: bool = False
    joules_std: float = 0.0
    energy_source: str = "integration"
    integrated_joules: float | None = None
    counter_joules: float | None = None
    error_band: float | None = None
    total_watts: Stats | None = None
    gpu_mb: Stats | None = None
    cpu_mb: Stats | None = None
    temperature: Stats | None = None
    flops_per_request: float | None = None
    macs_per_request: float | None = None
    initialization_duration_seconds: float | None = None
    success: bool | None = None
    unparsed: bool = False
    correctness: dict | None = None
    perplexity: float | None = None
    category: str | None = None
    response: str | None = None
    decoding: dict | None = None
    thinking_enabled: bool | None = None
    host: dict | None = None
    batch_size: int = 1
    repeats: int = 1
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Stats):
                value = value.to_dict()
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any], line: int | None = None) -> "ProfilingRecord":
        known = {f.name: f for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise SchemaViolation(f"unknown fields {sorted(unknown)}", line, sorted(unknown)[0])
        for f in fields(cls):
            required = f.default is MISSING and f.default_factory is MISSING
            if required and f.name not in data:
                raise SchemaViolation(f"missing required field {f.name!r}", line, f.name)
        kwargs = dict(data)
        for name in STATS_FIELDS:
            value = kwargs.get(name)
            if value is None:
                continue
            try:
                kwargs[name] = Stats(**value)
            except TypeError:
                raise SchemaViolation(f"field {name!r} must have avg/max/median/min", line, name) from None
        record = cls(**kwargs)
        record.validate(line)
        return record

    def validate(self, line: int | None = None) -> None:
        for name in ("per_query_joules", "total_query_seconds"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or isinstance(value, bool) or value < 0:
                raise SchemaViolation(f"{name} must be a non-negative number", line, name)
        for name in ("input", "output", "batch_size", "repeats"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise SchemaViolation(f"{name} must be a non-negative integer", line, name)
        if not isinstance(self.per_query_watts, Stats):
            raise SchemaViolation("per_query_watts must be a stats object", line, "per_query_watts")
        if self.category is not None and self.category not in CATEGORIES:
            raise SchemaViolation(f"unknown category {self.category!r}", line, "category")


def _dumps(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, allow_nan=False, separators=(",", ":"))


def write_records(
    records: Iterable[ProfilingRecord], path: str | Path, meta: dict | None = None
) -> int:
    """Write records atomically (temp file + rename). Returns the count."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    n = 0
    with tmp.open("w", encoding="utf-8", newline="\n") as fh:
        if meta is not None:
            fh.write(_dumps({"_meta": meta}) + "\n")
        for rec in records:
            rec.validate()
            fh.write(_dumps(rec.to_dict()) + "\n")
            n += 1
    os.replace(tmp, path)
    return n


def append_record(record: ProfilingRecord, path: str | Path) -> None:
    record.validate()
    with Path(path).open("a", encoding="utf-8", newline="\n") as fh:
        fh.write(_dumps(record.to_dict()) + "\n")
        fh.flush()


def read_records_with_meta(path: str | Path) -> tuple[dict | None, list[ProfilingRecord]]:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    trailing_partial = not text.endswith("\n") and text != ""
    meta = None
    out: list[ProfilingRecord] = []
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        is_last = lineno == len(lines)
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            if is_last and trailing_partial:
                log.warning("%s: ignoring partial trailing line %d", path, lineno)
                break
            raise SchemaViolation(f"invalid JSON: {exc.msg}", lineno) from None
        if not isinstance(data, dict):
            raise SchemaViolation("record must be a JSON object", lineno)
        if "_meta" in data and len(data) == 1:
            if out or meta is not None:
                raise SchemaViolation("metadata line must come first", lineno)
            meta = data["_meta"]
            continue
        out.append(ProfilingRecord.from_dict(data, lineno))
    return meta, out


def read_records(path: str | Path) -> list[ProfilingRecord]:
    return read_records_with_meta(path)[1]


def export_csv(records: Iterable[ProfilingRecord]) -> str:
    """Flatten records (stats become ``name.avg`` etc.) for spreadsheet analysis."""
    rows = []
    for rec in records:
        flat: dict[str, Any] = {}
        for key, value in rec.to_dict().items():
            if key in STATS_FIELDS:
                for stat in ("avg", "max", "median", "min"):
                    flat[f"{key}.{stat}"] = None if value is None else value[stat]
            elif isinstance(value, dict):
                flat[key] = _dumps(value)
            else:
                flat[key] = value
        rows.append(flat)
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return buf.getvalue()


def host_metadata() -> dict[str, Any]:
    brand = platform.processor()
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    brand = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    uname = platform.uname()
    return {
        "cpu_brand": brand or uname.machine,
        "cpu_count": os.cpu_count(),
        "host_name": uname.node,
        "os_name": uname.system,
        "os_version": uname.version,
        "kernel_version": uname.release,
    }


# query ingestion -------------------------------------------------------------

MAX_PROMPT_CHARS = 32_000
THINKING_DATASETS = frozenset({"naturalreasoning", "supergpqa", "gpqa"})


@dataclass(frozen=True)
class Rejection:
    query_id: str
    reason: str


@dataclass
class IngestOptions:
    require_ground_truth: bool = False
    max_chars: int | None = MAX_PROMPT_CHARS
    dedup: bool = True
    # external LLM-backed cleaning (language / malformed-query), off by default
    classifier_filter: Callable[[QuerySpec], str | None] | None = None


def _load_rows(path: Path) -> list[dict[str, Any]]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    if path.suffix == ".csv":
        return list(csv.DictReader(io.StringIO(text)))
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise IngestError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
    return rows


def filter_queries(
    queries: Iterable[QuerySpec], options: IngestOptions | None = None
) -> tuple[list[QuerySpec], list[Rejection]]:
    """Apply the cleaning filters. Idempotent: filtering the survivors changes nothing."""
    options = options or IngestOptions()
    kept: list[QuerySpec] = []
    rejected: list[Rejection] = []
    seen: set[str] = set()
    for q in queries:
        reason = None
        if options.require_ground_truth and not (q.reference or "").strip():
            reason = "no-ground-truth"
        elif options.max_chars is not None and len(q.prompt) > options.max_chars:
            reason = "length"
        elif options.dedup and q.prompt in seen:
            reason = "duplicate"
        elif options.classifier_filter is not None:
            reason = options.classifier_filter(q)
        if reason:
            log.info("rejected query %s: %s", q.query_id, reason)
            rejected.append(Rejection(q.query_id, reason))
            continue
        seen.add(q.prompt)
        kept.append(q)
    return kept, rejected


def ingest_queries(
    path: str | Path,
    dataset_tag: str,
    options: IngestOptions | None = None,
    decoding: DecodingConfig | None = None,
    rejected: list[Rejection] | None = None,
) -> list[QuerySpec]:
    """Load a JSONL/CSV query file and apply the cleaning filters.

    Rows carry ``prompt`` plus optional ``id``, ``reference`` (or ``answer``)
    and ``category``. Rejections are appended to ``rejected`` when given.
    """
    path = Path(path)
    decoding = decoding or DecodingConfig()
    thinking = dataset_tag.lower() in THINKING_DATASETS
    specs = []
    ids: set[str] = set()
    for i, row in enumerate(_load_rows(path)):
        qid = str(row.get("id") or row.get("query_id") or f"{dataset_tag}-{i}")
        if qid in ids:
            raise IngestError(f"duplicate query id {qid!r} in {path}")
        ids.add(qid)
        prompt = row.get("prompt") or ""
        if not prompt:
            if rejected is not None:
                rejected.append(Rejection(qid, "empty-prompt"))
            continue
        reference = row.get("reference", row.get("answer"))
        specs.append(
            QuerySpec(
                query_id=qid,
                prompt=prompt,
                dataset_tag=dataset_tag,
                decoding=decoding,
                thinking_enabled=bool(row.get("thinking", thinking)),
                reference=None if reference in (None, "") else str(reference),
                category=row.get("category") or None,
            )
        )
    kept, rej = filter_queries(specs, options)
    if rejected is not None:
        rejected.extend(rej)
    return kept


def sample_queries(queries: list[QuerySpec], n: int, seed: int, by_category: bool = False) -> list[QuerySpec]:
    """Seeded sample of ``n`` queries, optionally stratified by category."""
    rng = random.Random(seed)
    if n >= len(queries):
        return list(queries)
    if not by_category:
        return sorted(rng.sample(queries, n), key=queries.index)
    groups: dict[str | None, list[QuerySpec]] = {}
    for q in queries:
        groups.setdefault(q.category, []).append(q)
    picked: list[QuerySpec] = []
    total = len(queries)
    for key in sorted(groups, key=lambda k: (k is None, k or "")):
        members = groups[key]
        take = min(len(members), round(n * len(members) / total))
        picked.extend(rng.sample(members, take))
    order = {q.query_id: i for i, q in enumerate(queries)}
    return sorted(picked, key=lambda q: order[q.query_id])[:n]


# category annotation ---------------------------------------------------------

CATEGORIES = (
    "Office and administrative support",
    "Transportation and material moving",
    "Sales and related",
    "Food preparation and serving related",
    "General management",
    "Business and financial operations",
    "Healthcare practitioners and technical",
    "Production services",
    "Education instruction and library",
    "Healthcare support",
    "Construction and extraction",
    "Installation, maintenance, and repair",
    "Computer and mathematical",
    "Building grounds cleaning and maintenance",
    "Protective service",
    "Personal care and service",
    "Architecture and engineering",
    "Community and social service",
    "Arts, design, sports, entertainment, and media",
    "Life, physical, and social science",
    "Legal services",
    "Farming, fishing, and forestry",
    "None",
)


@dataclass
class Annotation:
    query_id: str
    category: str | None
    raw: str


def annotate_category(query: str, classifier: ChatClient) -> str:
    """Label a query with one of the 23 categories; anything else is rejected."""
    prompt = prompts.fill(prompts.QUERY_CATEGORIZER, query=query)
    body = classifier.complete([{"role": "user", "content": prompt}], temperature=0.0)
    try:
        raw = body["choices"][0]["message"]["content"] or ""
    except (KeyError, IndexError, TypeError):
        raise LabelNotInVocabulary("") from None
    label = raw.strip()
    if label not in CATEGORIES:
        raise LabelNotInVocabulary(raw)
    return label


def annotate_queries(queries: Iterable[QuerySpec], classifier: ChatClient) -> list[Annotation]:
    out = []
    for q in queries:
        try:
            out.append(Annotation(q.query_id, annotate_category(q.prompt, classifier), ""))
        except LabelNotInVocabulary as exc:
            out.append(Annotation(q.query_id, None, exc.raw))
        except EndpointError as exc:
            out.append(Annotation(q.query_id, None, f"endpoint error: {exc}"))
    return out
