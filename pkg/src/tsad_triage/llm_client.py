"""Chat-completions client for OpenAI-compatible endpoints."""

from __future__ import annotations

import base64
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol

import httpx

logger = logging.getLogger(__name__)

API_KEY_ENV = "LLM_API_KEY"
RETRY_STATUS = frozenset({408, 409, 425, 429, 500, 502, 503, 504})


class TransportError(RuntimeError):
    """The endpoint could not produce a completion within the retry budget."""


@dataclass(frozen=True)
class ChatRequest:
    """One single-turn completion request.

    ``hints`` carries the detection being judged; real endpoints never see it,
    offline stubs use it to answer.
    """

    prompt: str
    image_png: bytes | None = None
    vote_index: int = 0
    temperature: float = 1.0
    hints: dict[str, Any] = field(default_factory=dict, compare=False, hash=False)


class ChatClient(Protocol):
    model: str

    def complete(self, request: ChatRequest) -> str: ...


def build_messages(request: ChatRequest) -> list[dict[str, Any]]:
    if request.image_png is None:
        return [{"role": "user", "content": request.prompt}]
    encoded = base64.b64encode(request.image_png).decode("ascii")
    return [
        {
            "role": "user",
            "content": [
                {"type": "text", "text": request.prompt},
                {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{encoded}"}},
            ],
        }
    ]


class OpenAICompatibleClient:
    """POSTs to ``<endpoint>/chat/completions`` with bearer auth and exponential backoff."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        *,
        max_retries: int = 4,
        timeout: float = 120.0,
        backoff: float = 1.0,
        max_tokens: int | None = 1024,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        if not api_key:
            raise ValueError(f"no API key: set {API_KEY_ENV}")
        self.model = model
        self.url = endpoint.rstrip("/") + "/chat/completions"
        self.max_retries = max_retries
        self.backoff = backoff
        self.max_tokens = max_tokens
        self._sleep = sleep
        self._http = httpx.Client(
            headers={"Authorization": f"Bearer {api_key}"},
            timeout=timeout,
            transport=transport,
        )
        self.requests_sent = 0

    def close(self) -> None:
        self._http.close()

    def payload(self, request: ChatRequest) -> dict[str, Any]:
        body: dict[str, Any] = {
            "model": self.model,
            "messages": build_messages(request),
            "temperature": request.temperature,
        }
        if self.max_tokens is not None:
            body["max_tokens"] = self.max_tokens
        return body

    def complete(self, request: ChatRequest) -> str:
        body = self.payload(request)
        delay = self.backoff
        last_error = "no attempt made"
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(delay)
                delay *= 2
            self.requests_sent += 1
            try:
                resp = self._http.post(self.url, json=body)
            except httpx.TransportError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                logger.warning("chat request failed (%s), attempt %d", last_error, attempt + 1)
                continue
            if resp.status_code in RETRY_STATUS:
                last_error = f"HTTP {resp.status_code}"
                logger.warning("chat request got %s, attempt %d", last_error, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise TransportError(f"HTTP {resp.status_code} from {self.url}: {resp.text[:200]}")
            try:
                content = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise TransportError(f"malformed completion from {self.url}: {exc}") from exc
            if isinstance(content, list):
                content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
            return content or ""
        raise TransportError(f"{self.url}: giving up after {self.max_retries + 1} attempts ({last_error})")
