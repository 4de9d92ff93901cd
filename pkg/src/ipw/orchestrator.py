"""Single-query inference runs with aligned power measurement."""

from __future__ import annotations

import logging
import math
import statistics
from dataclasses import asdict, dataclass, field
from typing import Iterable

from ipw.clock import Clock
from ipw.endpoint import ChatClient
from ipw.errors import IPWError, PartialProfileFailure
from ipw.telemetry.energy import measure_window, window_samples
from ipw.telemetry.sampler import Sampler

log = logging.getLogger(__name__)

# denominator floor for throughput when decode time is ~0
THROUGHPUT_EPS_S = 1e-9
DEFAULT_COOLDOWN_S = 0.25


@dataclass(frozen=True)
class DecodingConfig:
    temperature: float = 0.6
    top_p: float = 0.95
    top_k: int = 20
    min_p: float = 0.0
    max_output_tokens: int = 32768
    repetition_penalty: float | None = None
    length_penalty: float | None = None

    def __post_init__(self) -> None:
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.top_k < 0:
            raise ValueError("top_k must be non-negative")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")

    def request_fields(self) -> dict:
        return {
            "temperature": self.temperature,
            "top_p": self.top_p,
            "top_k": self.top_k,
            "min_p": self.min_p,
            "max_tokens": self.max_output_tokens,
            "repetition_penalty": self.repetition_penalty,
            "length_penalty": self.length_penalty,
        }


@dataclass(frozen=True)
class QuerySpec:
    query_id: str
    prompt: str
    dataset_tag: str = ""
    decoding: DecodingConfig = field(default_factory=DecodingConfig)
    thinking_enabled: bool = False
    reference: str | None = None
    category: str | None = None

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError(f"query {self.query_id!r} has an empty prompt")


@dataclass
class GenerationResult:
    output_text: str
    input_tokens: int
    output_tokens: int
    ttft_s: float | None
    total_s: float
    per_token_ms: float | None
    throughput_tokens_per_sec: float
    token_logprobs: list[float] | None = None
    tokens_approx: bool = False


@dataclass
class Stats:
    avg: float
    max: float
    median: float
    min: float

    @classmethod
    def of(cls, values: Iterable[float]) -> "Stats | None":
        vals = [v for v in values if v is not None]
        if not vals:
            return None
        return cls(math.fsum(vals) / len(vals), max(vals), statistics.median(vals), min(vals))

    @classmethod
    def mean_of(cls, stats: list["Stats | None"]) -> "Stats | None":
        present = [s for s in stats if s is not None]
        if not present:
            return None
        n = len(present)
        return cls(
            *(math.fsum(getattr(s, k) for s in present) / n for k in ("avg", "max", "median", "min"))
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class QueryProfile:
    per_query_joules: float
    per_query_watts: Stats
    gpu_mb: Stats | None
    cpu_mb: Stats | None
    temperature: Stats | None
    repeats: int
    joules_std: float
    integrated_joules: float
    counter_joules: float | None
    energy_source: str
    flops_per_request: float | None = None


def estimate_tokens(text: str) -> int:
    """Whitespace token estimate used when the endpoint reports no usage."""
    return len(text.split())


def run_query(client: ChatClient, query: QuerySpec) -> tuple[GenerationResult, tuple[int, int]]:
    """Run one request (batch size 1) and return its result and time window.

    The window opens just before dispatch and closes when the final token
    arrives. TTFT is absent for non-streaming endpoints.
    """
    clock: Clock = client.clock
    messages = [{"role": "user", "content": query.prompt}]
    extra = query.decoding.request_fields()
    extra["chat_template_kwargs"] = {"enable_thinking": query.thinking_enabled}

    if client.config.stream:
        start = clock.now_ns()
        first_ns = last_ns = None
        pieces: list[str] = []
        logprobs: list[float] = []
        usage = None
        for chunk in client.stream(messages, **extra):
            if chunk.get("usage"):
                usage = chunk["usage"]
            for choice in chunk.get("choices") or []:
                delta = choice.get("delta") or {}
                text = (delta.get("content") or "") + (delta.get("reasoning_content") or "")
                if text:
                    now = clock.now_ns()
                    if first_ns is None:
                        first_ns = now
                    last_ns = now
                    pieces.append(text)
                lp = choice.get("logprobs") or {}
                logprobs.extend(c["logprob"] for c in lp.get("content") or [])
        end = last_ns if last_ns is not None else clock.now_ns()
        if end <= start:
            end = start + 1
        output = "".join(pieces)
        ttft = None if first_ns is None else (first_ns - start) / 1e9
    else:
        start = clock.now_ns()
        body = client.complete(messages, **extra)
        end = max(clock.now_ns(), start + 1)
        choice = (body.get("choices") or [{}])[0]
        output = (choice.get("message") or {}).get("content") or ""
        usage = body.get("usage")
        lp = choice.get("logprobs") or {}
        logprobs = [c["logprob"] for c in lp.get("content") or []]
        ttft = None

    if usage and "completion_tokens" in usage:
        n_in, n_out, approx = int(usage.get("prompt_tokens", 0)), int(usage["completion_tokens"]), False
    else:
        n_in, n_out, approx = estimate_tokens(query.prompt), estimate_tokens(output), True

    total_s = (end - start) / 1e9
    decode_s = total_s - (ttft or 0.0)
    throughput = n_out / max(decode_s, THROUGHPUT_EPS_S)
    result = GenerationResult(
        output_text=output,
        input_tokens=n_in,
        output_tokens=n_out,
        ttft_s=ttft,
        total_s=total_s,
        per_token_ms=1000.0 / throughput if n_out > 0 else None,
        throughput_tokens_per_sec=throughput,
        token_logprobs=logprobs or None,
        tokens_approx=approx,
    )
    return result, (start, end)


def estimate_flops(active_params: float, input_tokens: int, output_tokens: int) -> float:
    """Decoder forward-pass approximation: ``2 * params * tokens``."""
    if active_params <= 0:
        raise ValueError("active_params must be positive")
    if input_tokens < 0 or output_tokens < 0 or input_tokens + output_tokens == 0:
        raise ValueError("need at least one token")
    return 2.0 * active_params * (input_tokens + output_tokens)


def profile_query(
    client: ChatClient,
    query: QuerySpec,
    sampler: Sampler,
    repeats: int = 10,
    cooldown_s: float = DEFAULT_COOLDOWN_S,
    active_params: float | None = None,
) -> tuple[GenerationResult, QueryProfile]:
    """Run ``query`` ``repeats`` times and average its energy and power.

    Power statistics are computed per window and then averaged across repeats.
    ``sampler`` must already be running on the same clock as ``client``.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    clock = client.clock
    joules, integrated, counters = [], [], []
    watts, gpu, cpu, temps = [], [], [], []
    result: GenerationResult | None = None
    for i in range(repeats):
        if i:
            clock.sleep(cooldown_s)
        try:
            sampler.wait_for(-(2**63))  # at least one reading before dispatch
            result, (start, end) = run_query(client, query)
            sampler.wait_for(end)
            trace = sampler.snapshot()
            energy = measure_window(trace, start, end)
            inside = window_samples(trace, start, end)
        except IPWError as exc:
            raise PartialProfileFailure(query.query_id, i, repeats, exc) from exc
        if energy.counter_error:
            log.warning("query %s: %s", query.query_id, energy.counter_error)
        joules.append(energy.joules)
        integrated.append(energy.integrated_j)
        counters.append(energy.counter_j)
        watts.append(Stats.of(s.total_power_watts for s in inside))
        gpu.append(Stats.of(s.total_memory_mb for s in inside))
        cpu.append(Stats.of(s.host_memory_mb for s in inside))
        temps.append(Stats.of(s.mean_temperature_c for s in inside))

    assert result is not None
    have_counter = all(c is not None for c in counters)
    flops = None
    if active_params and result.input_tokens + result.output_tokens > 0:
        flops = estimate_flops(active_params, result.input_tokens, result.output_tokens)
    profile = QueryProfile(
        per_query_joules=math.fsum(joules) / repeats,
        per_query_watts=Stats.mean_of(watts),
        gpu_mb=Stats.mean_of(gpu),
        cpu_mb=Stats.mean_of(cpu),
        temperature=Stats.mean_of(temps),
        repeats=repeats,
        joules_std=statistics.pstdev(joules) if repeats > 1 else 0.0,
        integrated_joules=math.fsum(integrated) / repeats,
        counter_joules=math.fsum(counters) / repeats if have_counter else None,
        energy_source="counter" if have_counter else "integration",
        flops_per_request=flops,
    )
    return result, profile


__all__ = [
    "DecodingConfig",
    "GenerationResult",
    "QueryProfile",
    "QuerySpec",
    "Stats",
    "estimate_flops",
    "estimate_tokens",
    "profile_query",
    "run_query",
]
