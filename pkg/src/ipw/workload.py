"""Workload traces: timestamped queries with per-model capability."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

from ipw.errors import TraceError

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("t_iso8601", "query_id", "input_tokens", "output_tokens", "capable_models")
OVERRIDE_COLUMNS = ("query_id", "model_id", "input_tokens", "output_tokens")


@dataclass(frozen=True)
class TraceRow:
    t: datetime
    query_id: str
    input_tokens: int
    output_tokens: int
    capable: frozenset[str]
    # model_id -> (input_tokens, output_tokens) when a model differs from the default
    token_overrides: dict[str, tuple[int, int]] = field(default_factory=dict, compare=False, hash=False)

    def tokens_for(self, model_id: str) -> tuple[int, int]:
        return self.token_overrides.get(model_id, (self.input_tokens, self.output_tokens))


@dataclass(frozen=True)
class TraceSummary:
    n: int
    duration_s: float
    serviceable_fraction: float | None

    def __str__(self) -> str:
        frac = "n/a" if self.serviceable_fraction is None else f"{self.serviceable_fraction:.3f}"
        return f"n={self.n} duration={self.duration_s:.1f}s serviceable={frac}"


@dataclass
class WorkloadTrace:
    rows: list[TraceRow]

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def offsets_s(self) -> list[float]:
        if not self.rows:
            return []
        t0 = self.rows[0].t
        return [(r.t - t0).total_seconds() for r in self.rows]

    def summary(self, local_models: Iterable[str] | None = None) -> TraceSummary:
        n = len(self.rows)
        duration = self.offsets_s()[-1] if n else 0.0
        frac = None
        if local_models is not None and n:
            local = set(local_models)
            frac = sum(1 for r in self.rows if r.capable & local) / n
        return TraceSummary(n, duration, frac)


def _parse_time(raw: str) -> datetime:
    t = datetime.fromisoformat(raw.strip().replace("Z", "+00:00"))
    return t if t.tzinfo else t.replace(tzinfo=timezone.utc)


def format_time(t: datetime) -> str:
    return t.astimezone(timezone.utc).isoformat(timespec="microseconds").replace("+00:00", "Z")


def parse_trace_csv(text: str, overrides: dict[str, dict[str, tuple[int, int]]] | None = None) -> WorkloadTrace:
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in TRACE_COLUMNS if c not in (reader.fieldnames or ())]
    if missing:
        raise TraceError(f"trace missing columns {missing}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        try:
            caps = frozenset(m.strip() for m in (row["capable_models"] or "").split(";") if m.strip())
            qid = row["query_id"]
            rows.append(
                TraceRow(
                    t=_parse_time(row["t_iso8601"]),
                    query_id=qid,
                    input_tokens=int(row["input_tokens"]),
                    output_tokens=int(row["output_tokens"]),
                    capable=caps,
                    token_overrides=(overrides or {}).get(qid, {}),
                )
            )
        except (TypeError, ValueError) as exc:
            raise TraceError(f"line {lineno}: {exc}") from None
        if rows[-1].input_tokens < 0 or rows[-1].output_tokens < 0:
            raise TraceError(f"line {lineno}: negative token count")
    return WorkloadTrace(rows)


def read_overrides(path: str | Path) -> dict[str, dict[str, tuple[int, int]]]:
    out: dict[str, dict[str, tuple[int, int]]] = {}
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in OVERRIDE_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise TraceError(f"override file missing columns {missing}")
        for row in reader:
            out.setdefault(row["query_id"], {})[row["model_id"]] = (
                int(row["input_tokens"]),
                int(row["output_tokens"]),
            )
    return out


def read_trace(path: str | Path, overrides_path: str | Path | None = None) -> WorkloadTrace:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise TraceError(f"cannot read trace {path}: {exc}") from exc
    overrides = read_overrides(overrides_path) if overrides_path else None
    return parse_trace_csv(text, overrides)


def trace_to_csv(trace: WorkloadTrace) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for r in trace.rows:
        writer.writerow(
            [format_time(r.t), r.query_id, r.input_tokens, r.output_tokens, ";".join(sorted(r.capable))]
        )
    return buf.getvalue()


def write_trace(trace: WorkloadTrace, path: str | Path) -> None:
    Path(path).write_text(trace_to_csv(trace), encoding="utf-8")


def check_trace(trace: WorkloadTrace, known_models: Iterable[str]) -> None:
    """Raise :class:`TraceError` on time-order violations or unknown model ids."""
    known = set(known_models)
    for i, (prev, cur) in enumerate(zip(trace.rows, trace.rows[1:]), start=2):
        if cur.t < prev.t:
            raise TraceError(f"row {i} ({cur.query_id}) is earlier than row {i - 1}")
    for i, row in enumerate(trace.rows, start=1):
        unknown = (row.capable | set(row.token_overrides)) - known
        if unknown:
            raise TraceError(f"row {i} ({row.query_id}) references unregistered models {sorted(unknown)}")


def validate_trace(
    path: str | Path,
    known_models: Iterable[str],
    local_models: Iterable[str] | None = None,
    overrides_path: str | Path | None = None,
) -> WorkloadTrace:
    known = list(known_models)
    trace = read_trace(path, overrides_path)
    check_trace(trace, known)
    log.info("trace %s: %s", path, trace.summary(local_models))
    return trace
