"""Exception hierarchy shared across the harness."""

from __future__ import annotations


class IPWError(Exception):
    """Base class for all harness errors."""


# telemetry
class TelemetryError(IPWError):
    pass


class BackendUnavailable(TelemetryError):
    pass


class TelemetryParseError(TelemetryError):
    pass


class EmptyInput(TelemetryError):
    pass


class MixedTimestamps(TelemetryError):
    pass


class EmptyWindowCoverage(TelemetryError):
    pass


class CounterAbsent(TelemetryError):
    pass


class CounterRegression(TelemetryError):
    pass


class ReplayExhausted(BackendUnavailable):
    """Replay source has no more rows."""


# endpoints
class EndpointError(IPWError):
    def __init__(self, message: str, status: int | None = None, body: str | None = None):
        super().__init__(message)
        self.status = status
        self.body = body


class EndpointTimeout(EndpointError):
    pass


class StreamInterrupted(EndpointError):
    pass


class PartialProfileFailure(IPWError):
    def __init__(self, query_id: str, completed: int, requested: int, cause: Exception):
        super().__init__(
            f"query {query_id}: repeat {completed + 1}/{requested} failed: {cause}"
        )
        self.query_id = query_id
        self.completed = completed
        self.requested = requested
        self.cause = cause


# evaluation
class EvaluationError(IPWError):
    pass


class NoVerdictFound(EvaluationError):
    pass


class AmbiguousVerdict(EvaluationError):
    pass


class ExtractionFailure(EvaluationError):
    pass


class Unscored(EvaluationError):
    """Judge output could not be turned into a label."""

    def __init__(self, message: str, raw: str | None = None):
        super().__init__(message)
        self.raw = raw


# metrics
class MetricError(IPWError):
    pass


class MissingField(MetricError):
    pass


class CategoryMismatch(MetricError):
    pass


# routing
class RoutingError(IPWError):
    pass


class ProfileMissing(RoutingError):
    pass


class ZeroBaseline(RoutingError):
    pass


# io
class SchemaViolation(IPWError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field


class TraceError(IPWError):
    pass


class IngestError(IPWError):
    pass


class LabelNotInVocabulary(IPWError):
    def __init__(self, raw: str):
        super().__init__(f"classifier output not in category vocabulary: {raw!r}")
        self.raw = raw
