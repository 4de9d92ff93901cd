"""Response scoring: multiple-choice matching and LLM-as-judge verdicts."""

from __future__ import annotations

import enum
import json
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Literal, TypeVar

from ipw import prompts
from ipw.endpoint import ChatClient
from ipw.errors import (
    AmbiguousVerdict,
    EndpointError,
    ExtractionFailure,
    NoVerdictFound,
    Unscored,
)

Position = Literal["A", "B"]
DEFAULT_LOCAL_POSITION: Position = "B"
DEFAULT_ALPHABET = "ABCDEFGHIJ"


class Verdict(enum.IntEnum):
    """Judge outcomes, ordered from best-for-A to best-for-B."""

    A_MUCH_BETTER = 2
    A_BETTER = 1
    TIE = 0
    B_BETTER = -1
    B_MUCH_BETTER = -2

    @property
    def token(self) -> str:
        return _TOKENS[self]

    @classmethod
    def from_token(cls, token: str) -> "Verdict":
        return _BY_TOKEN[token.strip()]


_TOKENS = {
    Verdict.A_MUCH_BETTER: "[[A>>B]]",
    Verdict.A_BETTER: "[[A>B]]",
    Verdict.TIE: "[[A=B]]",
    Verdict.B_BETTER: "[[B>A]]",
    Verdict.B_MUCH_BETTER: "[[B>>A]]",
}
_BY_TOKEN = {tok: v for v, tok in _TOKENS.items()}
_TOKEN_RE = re.compile(r"\[\[(?:A>>B|A>B|A=B|B>A|B>>A)\]\]")

VERDICT_SCHEMA = {
    "type": "object",
    "properties": {
        "explanation": {"type": "string"},
        "verdict": {"type": "string", "enum": list(_TOKENS.values())},
    },
    "required": ["explanation", "verdict"],
    "additionalProperties": False,
}


def _structured_verdict(text: str) -> Verdict | None:
    body = text.strip()
    fence = re.search(r"```(?:json)?\s*(\{.*?\})\s*```", body, re.DOTALL)
    if fence:
        body = fence.group(1)
    if not body.startswith("{"):
        return None
    try:
        data = json.loads(body)
    except json.JSONDecodeError:
        return None
    if not isinstance(data, dict):
        return None
    value = data.get("verdict")
    if isinstance(value, str) and value.strip() in _BY_TOKEN:
        return _BY_TOKEN[value.strip()]
    return None


def parse_verdict(judge_output: str) -> Verdict:
    """Extract the judge's verdict.

    A JSON body with a ``verdict`` field wins. Otherwise the last verdict
    token in the text is used, unless that token shares its line with a
    different token (an echoed option list), which is rejected as ambiguous.
    """
    structured = _structured_verdict(judge_output)
    if structured is not None:
        return structured
    matches = list(_TOKEN_RE.finditer(judge_output))
    if not matches:
        raise NoVerdictFound("judge output contains no verdict token")
    last = matches[-1]
    line_start = judge_output.rfind("\n", 0, last.start()) + 1
    line_end = judge_output.find("\n", last.end())
    line = judge_output[line_start : None if line_end < 0 else line_end]
    if len(set(_TOKEN_RE.findall(line))) > 1:
        raise AmbiguousVerdict(f"final line lists several verdicts: {line.strip()[:120]!r}")
    return _BY_TOKEN[last.group(0)]


def verdict_to_success(verdict: Verdict, local_position: Position) -> bool:
    """Local side wins or ties."""
    if local_position not in ("A", "B"):
        raise ValueError("local_position must be 'A' or 'B'")
    score = int(verdict) if local_position == "A" else -int(verdict)
    return score >= 0


# multiple choice ------------------------------------------------------------

# Ordered by specificity; the match that ends last in the response wins.
CHOICE_PATTERNS = (
    r"answer\s+is\s*:?\s*\(?({L})\)?(?![A-Za-z])",
    r"answer\s*:\s*\(?({L})\)?(?![A-Za-z])",
    r"\(({L})\)\s*[.!]?\s*$",
    r"^\s*\(?({L})[).:]?\s*$",
)


def extract_choice_letter(response: str, alphabet: Iterable[str] = DEFAULT_ALPHABET) -> str:
    letters = "".join(sorted({c.upper() for c in alphabet}))
    if not letters:
        raise ValueError("alphabet must be non-empty")
    cls = "[" + re.escape(letters) + "]"
    best: tuple[int, int, str] | None = None
    for rank, pattern in enumerate(CHOICE_PATTERNS):
        regex = re.compile(pattern.format(L=cls), re.IGNORECASE | re.MULTILINE)
        for m in regex.finditer(response):
            key = (m.end(1), -rank, m.group(1).upper())
            if best is None or key > best:
                best = key
    if best is None:
        raise ExtractionFailure("no answer letter found")
    return best[2]


@dataclass(frozen=True)
class ChoiceScore:
    correct: bool
    unparsed: bool
    letter: str | None

    def __bool__(self) -> bool:
        return self.correct


def score_multiple_choice(
    response: str, reference_letter: str, alphabet: Iterable[str] = DEFAULT_ALPHABET
) -> ChoiceScore:
    alphabet = "".join(alphabet)
    ref = reference_letter.strip().upper()
    if len(ref) != 1 or ref not in alphabet.upper():
        raise ValueError(f"reference letter {reference_letter!r} not in alphabet {alphabet!r}")
    try:
        letter = extract_choice_letter(response, alphabet)
    except ExtractionFailure:
        return ChoiceScore(False, True, None)
    return ChoiceScore(letter == ref, False, letter)


# judges ---------------------------------------------------------------------

@dataclass
class CorrectnessLabel:
    query_id: str
    model_id: str
    success: bool
    method: Literal["mc-exact", "judge-pairwise", "judge-reference"]
    judge_model_id: str | None = None
    verdict: str | None = None  # token, for pairwise labels
    local_position: Position | None = None
    unparsed: bool = False

    def __post_init__(self) -> None:
        if self.method == "judge-pairwise" and self.verdict is None:
            raise ValueError("pairwise labels must store the verdict")


def pairwise_messages(query: str, response_a: str, response_b: str) -> list[dict]:
    user = (
        f"<|User Prompt|>\n{query}\n\n"
        f"<|The Start of Assistant A's Answer|>\n{response_a}\n<|The End of Assistant A's Answer|>\n\n"
        f"<|The Start of Assistant B's Answer|>\n{response_b}\n<|The End of Assistant B's Answer|>"
    )
    return [
        {"role": "system", "content": prompts.load(prompts.PAIRWISE_JUDGE)},
        {"role": "user", "content": user},
    ]


def _content(body: dict) -> str:
    try:
        return body["choices"][0]["message"]["content"] or ""
    except (KeyError, IndexError, TypeError):
        raise Unscored("judge response has no message content") from None


def judge_pairwise(query: str, response_a: str, response_b: str, judge: ChatClient) -> Verdict:
    """Ask the judge to compare two responses. Failures raise :class:`Unscored`."""
    response_format = {
        "type": "json_schema",
        "json_schema": {"name": "pairwise_verdict", "schema": VERDICT_SCHEMA, "strict": True},
    }
    try:
        body = judge.complete(
            pairwise_messages(query, response_a, response_b),
            temperature=0.0,
            response_format=response_format,
        )
    except EndpointError as exc:
        raise Unscored(f"judge endpoint failure: {exc}") from exc
    text = _content(body)
    try:
        return parse_verdict(text)
    except (NoVerdictFound, AmbiguousVerdict) as exc:
        raise Unscored(str(exc), raw=text) from exc


def judge_local_vs_reference(
    query_id: str,
    model_id: str,
    query: str,
    local_response: str,
    reference_response: str,
    judge: ChatClient,
    local_position: Position = DEFAULT_LOCAL_POSITION,
) -> CorrectnessLabel:
    if local_position == "A":
        verdict = judge_pairwise(query, local_response, reference_response, judge)
    else:
        verdict = judge_pairwise(query, reference_response, local_response, judge)
    return CorrectnessLabel(
        query_id=query_id,
        model_id=model_id,
        success=verdict_to_success(verdict, local_position),
        method="judge-pairwise",
        judge_model_id=judge.config.model,
        verdict=verdict.token,
        local_position=local_position,
    )


@dataclass(frozen=True)
class PositionAudit:
    verdict_local_a: Verdict
    verdict_local_b: Verdict

    @property
    def consistent(self) -> bool:
        """Same success outcome regardless of which slot the local answer took."""
        return verdict_to_success(self.verdict_local_a, "A") == verdict_to_success(self.verdict_local_b, "B")


def audit_position(query: str, local_response: str, reference_response: str, judge: ChatClient) -> PositionAudit:
    return PositionAudit(
        judge_pairwise(query, local_response, reference_response, judge),
        judge_pairwise(query, reference_response, local_response, judge),
    )


def judge_reference(question: str, response: str, reference: str, judge: ChatClient) -> bool:
    prompt = prompts.fill(prompts.REFERENCE_JUDGE, question=question, response=response, reference=reference)
    try:
        body = judge.complete([{"role": "user", "content": prompt}], temperature=0.0)
    except EndpointError as exc:
        raise Unscored(f"judge endpoint failure: {exc}") from exc
    text = _content(body).strip()
    if text == "True":
        return True
    if text == "False":
        return False
    raise Unscored(f"judge returned non-boolean output {text[:80]!r}", raw=text)


T = TypeVar("T")
R = TypeVar("R")


class RateLimiter:
    """Spaces calls at least ``1 / max_per_second`` apart across threads."""

    def __init__(self, max_per_second: float | None):
        self.min_gap = 0.0 if not max_per_second else 1.0 / max_per_second
        self._next = 0.0
        self._lock = threading.Lock()

    def wait(self) -> None:
        if not self.min_gap:
            return
        with self._lock:
            now = time.monotonic()
            slot = max(now, self._next)
            self._next = slot + self.min_gap
        if slot > now:
            time.sleep(slot - now)


def map_judged(
    fn: Callable[[T], R],
    items: Iterable[T],
    max_workers: int = 4,
    max_per_second: float | None = None,
) -> list[R | Exception]:
    """Run independent judge calls concurrently; failures come back as values."""
    limiter = RateLimiter(max_per_second)

    def call(item: T) -> R | Exception:
        limiter.wait()
        try:
            return fn(item)
        except Exception as exc:  # surfaced to the caller per item
            return exc

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(call, items))
