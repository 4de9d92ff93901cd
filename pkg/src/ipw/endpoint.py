"""OpenAI-compatible chat-completions client.

``EndpointConfig.url`` may also be ``mock:PATH`` to serve a scripted
:class:`~ipw.mock_endpoint.MockEndpoint` from a JSON file; this is what the
test suite and deterministic replay runs use.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Any, Iterator

import httpx

from ipw.clock import Clock, SystemClock
from ipw.errors import EndpointError, EndpointTimeout, StreamInterrupted


@dataclass
class EndpointConfig:
    url: str
    model: str = "default"
    api_key_env: str | None = "OPENAI_API_KEY"
    timeout_s: float = 600.0
    stream: bool = True
    logprobs: bool = False

    def api_key(self) -> str | None:
        if not self.api_key_env:
            return None
        return os.environ.get(self.api_key_env)


class ChatClient:
    def __init__(
        self,
        config: EndpointConfig,
        clock: Clock | None = None,
        transport: httpx.BaseTransport | None = None,
    ):
        self.config = config
        self.clock = clock or SystemClock()
        base_url = config.url
        if config.url.startswith("mock:") and transport is None:
            from ipw.mock_endpoint import MockEndpoint

            transport = MockEndpoint.from_file(config.url.removeprefix("mock:"), self.clock).transport()
            base_url = "http://mock.invalid/v1"
        headers = {}
        key = config.api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._http = httpx.Client(
            base_url=base_url.rstrip("/"),
            headers=headers,
            timeout=config.timeout_s,
            transport=transport,
        )

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "ChatClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _payload(self, messages: list[dict], stream: bool, extra: dict[str, Any]) -> dict:
        body: dict[str, Any] = {"model": self.config.model, "messages": messages, "stream": stream}
        if stream:
            body["stream_options"] = {"include_usage": True}
        if self.config.logprobs:
            body["logprobs"] = True
        body.update({k: v for k, v in extra.items() if v is not None})
        return body

    def complete(self, messages: list[dict], **extra: Any) -> dict:
        """Non-streaming request; returns the decoded JSON body."""
        try:
            resp = self._http.post("/chat/completions", json=self._payload(messages, False, extra))
        except httpx.TimeoutException as exc:
            raise EndpointTimeout(f"endpoint timed out: {exc}") from exc
        except httpx.TransportError as exc:
            raise EndpointError(f"endpoint unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise EndpointError(f"endpoint returned {resp.status_code}", resp.status_code, resp.text)
        try:
            return resp.json()
        except json.JSONDecodeError as exc:
            raise EndpointError(f"endpoint returned invalid JSON: {exc}", resp.status_code, resp.text) from exc

    def stream(self, messages: list[dict], **extra: Any) -> Iterator[dict]:
        """Yield decoded SSE chunks until ``[DONE]``."""
        try:
            with self._http.stream(
                "POST", "/chat/completions", json=self._payload(messages, True, extra)
            ) as resp:
                if resp.status_code != 200:
                    body = resp.read().decode(errors="replace")
                    raise EndpointError(f"endpoint returned {resp.status_code}", resp.status_code, body)
                done = False
                for line in resp.iter_lines():
                    if not line.startswith("data:"):
                        continue
                    data = line[5:].strip()
                    if data == "[DONE]":
                        done = True
                        break
                    try:
                        yield json.loads(data)
                    except json.JSONDecodeError as exc:
                        raise StreamInterrupted(f"malformed stream chunk: {data[:80]!r}") from exc
                if not done:
                    raise StreamInterrupted("stream closed before [DONE]")
        except httpx.TimeoutException as exc:
            raise EndpointTimeout(f"endpoint timed out: {exc}") from exc
        except (httpx.RemoteProtocolError, httpx.ReadError) as exc:
            raise StreamInterrupted(f"stream interrupted: {exc}") from exc
        except httpx.TransportError as exc:
            raise EndpointError(f"endpoint unreachable: {exc}") from exc
