"""Scripted OpenAI-compatible endpoint for tests and deterministic runs.

Script format (JSON)::

    {
      "model": "mock-8b",
      "responses": [            # used in rotation when no prompt matches
        {"tokens": ["Hello ", "world"], "first_token_s": 0.2, "token_interval_s": 0.1,
         "usage": {"input": 12, "output": 2}, "logprobs": [-0.1, -0.2]}
      ],
      "by_prompt": {"exact prompt text": {...}}
    }

A response may instead carry ``"status": 500, "body": "..."`` (error),
``"timeout": true``, ``"interrupt_after": N`` (drop the stream after N tokens),
or ``"content": "..."`` with ``"latency_s"`` for non-streaming replies.
Timing goes through the supplied clock, so a :class:`~ipw.clock.VirtualClock`
makes every run identical.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterator

import httpx

from ipw.clock import Clock


class MockEndpoint:
    def __init__(self, script: dict[str, Any], clock: Clock):
        self.script = script
        self.clock = clock
        self.requests: list[dict] = []
        self._rotation = 0

    @classmethod
    def from_file(cls, path: str | Path, clock: Clock) -> "MockEndpoint":
        return cls(json.loads(Path(path).read_text()), clock)

    def transport(self) -> httpx.MockTransport:
        return httpx.MockTransport(self.handle)

    def _pick(self, body: dict) -> dict:
        prompt = ""
        for msg in body.get("messages", []):
            if msg.get("role") == "user":
                prompt = msg.get("content", "")
        by_prompt = self.script.get("by_prompt", {})
        if prompt in by_prompt:
            return by_prompt[prompt]
        responses = self.script.get("responses") or [{"tokens": ["ok"]}]
        spec = responses[self._rotation % len(responses)]
        self._rotation += 1
        return spec

    def handle(self, request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content or b"{}")
        self.requests.append(body)
        spec = self._pick(body)
        if spec.get("timeout"):
            raise httpx.ReadTimeout("scripted timeout", request=request)
        status = spec.get("status", 200)
        if status != 200:
            return httpx.Response(status, text=spec.get("body", ""))
        model = self.script.get("model", body.get("model", "mock"))
        if body.get("stream"):
            return httpx.Response(
                200,
                headers={"content-type": "text/event-stream"},
                content=self._sse(spec, model),
            )
        self.clock.sleep(spec.get("latency_s", 0.0))
        content = spec.get("content", "".join(spec.get("tokens", [])))
        message: dict[str, Any] = {"role": "assistant", "content": content}
        choice: dict[str, Any] = {"index": 0, "message": message, "finish_reason": "stop"}
        if "logprobs" in spec:
            choice["logprobs"] = {"content": [{"token": "", "logprob": lp} for lp in spec["logprobs"]]}
        out: dict[str, Any] = {"id": "mock", "object": "chat.completion", "model": model, "choices": [choice]}
        if "usage" in spec:
            out["usage"] = _usage(spec["usage"])
        return httpx.Response(200, json=out)

    def _sse(self, spec: dict, model: str) -> Iterator[bytes]:
        tokens = spec.get("tokens", [])
        times = spec.get("token_times_s")
        if times is None:
            first = spec.get("first_token_s", 0.0)
            step = spec.get("token_interval_s", 0.0)
            times = [first + i * step for i in range(len(tokens))]
        logprobs = spec.get("logprobs")
        interrupt = spec.get("interrupt_after")
        elapsed = 0.0
        for i, (tok, t) in enumerate(zip(tokens, times)):
            if interrupt is not None and i >= interrupt:
                raise httpx.ReadError("scripted interruption")
            self.clock.sleep(max(t - elapsed, 0.0))
            elapsed = max(t, elapsed)
            choice: dict[str, Any] = {"index": 0, "delta": {"content": tok}, "finish_reason": None}
            if logprobs is not None:
                choice["logprobs"] = {"content": [{"token": tok, "logprob": logprobs[i]}]}
            yield _event({"id": "mock", "object": "chat.completion.chunk", "model": model, "choices": [choice]})
        final: dict[str, Any] = {
            "id": "mock",
            "object": "chat.completion.chunk",
            "model": model,
            "choices": [{"index": 0, "delta": {}, "finish_reason": "stop"}],
        }
        if "usage" in spec:
            final["usage"] = _usage(spec["usage"])
        yield _event(final)
        yield b"data: [DONE]\n\n"


def _usage(u: dict) -> dict:
    prompt = u.get("input", u.get("prompt_tokens", 0))
    completion = u.get("output", u.get("completion_tokens", 0))
    return {"prompt_tokens": prompt, "completion_tokens": completion, "total_tokens": prompt + completion}


def _event(obj: dict) -> bytes:
    return b"data: " + json.dumps(obj, separators=(",", ":")).encode() + b"\n\n"
