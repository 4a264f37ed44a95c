"""Chat/embeddings client for any OpenAI-compatible endpoint.

Wire protocol: POST {base_url}/v1/chat/completions and /v1/embeddings with
the standard JSON bodies. Retries transport errors, 429 and 5xx with
exponential backoff plus jitter; a semaphore caps in-flight requests at
``parallelism`` per client instance.
"""

from __future__ import annotations

import math
import os
import random
import threading
import time
from dataclasses import dataclass, field

import requests

from babelgen.prompting import ChatMessage

API_KEY_ENV = "BABELGEN_API_KEY"

RETRYABLE_STATUSES = {429} | set(range(500, 600))


class BackendError(Exception):
    """A request failed permanently (retries exhausted or non-retryable)."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class BackendTimeout(BackendError):
    """The endpoint did not answer within the configured timeout."""


@dataclass
class BackendConfig:
    base_url: str
    model_id: str
    temperature: float = 1.0
    top_p: float = 0.95
    max_tokens: int = 1024
    timeout: float = 60.0
    max_retries: int = 3
    parallelism: int = 4
    api_key: str | None = None

    def __post_init__(self):
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("top_p must be in (0, 1]")

    def resolve_api_key(self) -> str | None:
        return self.api_key or os.environ.get(API_KEY_ENV)


@dataclass
class TranscriptEvent:
    """One logged exchange or backoff, consumed by the run store."""

    kind: str  # chat | embed | backoff
    payload: dict
    timestamp: float = field(default_factory=time.time)


class HttpBackend:
    """Synchronous client; safe to share across worker threads."""

    def __init__(self, cfg: BackendConfig, on_event=None):
        self.cfg = cfg
        self.on_event = on_event
        self._gate = threading.BoundedSemaphore(cfg.parallelism)
        self._session = requests.Session()
        self._sleep = time.sleep  # patched in tests
        self._rng = random.Random()

    @property
    def model_id(self) -> str:
        return self.cfg.model_id

    def _emit(self, kind: str, payload: dict) -> None:
        if self.on_event is not None:
            self.on_event(TranscriptEvent(kind=kind, payload=payload))

    def _post(self, route: str, body: dict, kind: str) -> dict:
        url = self.cfg.base_url.rstrip("/") + route
        headers = {"Content-Type": "application/json"}
        api_key = self.cfg.resolve_api_key()
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        attempts = self.cfg.max_retries + 1
        last_status: int | None = None
        last_error = "unknown error"
        started = time.time()
        for attempt in range(attempts):
            try:
                with self._gate:
                    response = self._session.post(
                        url, json=body, headers=headers, timeout=self.cfg.timeout
                    )
            except requests.Timeout:
                raise BackendTimeout(f"{url}: timed out after {self.cfg.timeout}s")
            except requests.RequestException as exc:
                last_status, last_error = None, str(exc)
            else:
                if response.status_code == 200:
                    data = response.json()
                    self._emit(
                        kind,
                        {
                            "url": url,
                            "model": self.cfg.model_id,
                            "request": body,
                            "response": data,
                            "usage": data.get("usage"),
                            "started_at": started,
                            "finished_at": time.time(),
                            "attempts": attempt + 1,
                        },
                    )
                    return data
                last_status = response.status_code
                last_error = response.text[:500]
                if response.status_code not in RETRYABLE_STATUSES:
                    raise BackendError(
                        f"{url}: HTTP {response.status_code}: {last_error}",
                        status=response.status_code,
                    )
            if attempt < attempts - 1:
                delay = min(2.0**attempt, 30.0) * (1.0 + 0.25 * self._rng.random())
                self._emit(
                    "backoff",
                    {"url": url, "attempt": attempt + 1, "status": last_status, "delay": delay},
                )
                self._sleep(delay)
        raise BackendError(
            f"{url}: giving up after {attempts} attempts (last status {last_status}: {last_error})",
            status=last_status,
        )

    def chat_complete(self, messages: list[ChatMessage]) -> str:
        if not messages:
            raise ValueError("messages must be non-empty")
        body = {
            "model": self.cfg.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
            "temperature": self.cfg.temperature,
            "top_p": self.cfg.top_p,
            "max_tokens": self.cfg.max_tokens,
        }
        data = self._post("/v1/chat/completions", body, kind="chat")
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed chat completion payload: {exc}") from exc

    def embed(self, texts: list[str], batch_size: int = 64) -> list[list[float]]:
        """Embed texts in batches; returns one vector per input, equal lengths."""
        if not texts:
            raise ValueError("texts must be non-empty")
        for i, text in enumerate(texts):
            if not text:
                raise ValueError(f"cannot embed empty string at index {i}")
        vectors: list[list[float]] = []
        for start in range(0, len(texts), batch_size):
            batch = texts[start : start + batch_size]
            body = {"model": self.cfg.model_id, "input": batch}
            data = self._post("/v1/embeddings", body, kind="embed")
            try:
                items = sorted(data["data"], key=lambda item: item["index"])
                vectors.extend([item["embedding"] for item in items])
            except (KeyError, TypeError) as exc:
                raise BackendError(f"malformed embeddings payload: {exc}") from exc
        dims = {len(v) for v in vectors}
        if len(dims) != 1:
            raise BackendError(f"embedding dimensionality mismatch across batch: {sorted(dims)}")
        if len(vectors) != len(texts):
            raise BackendError(f"expected {len(texts)} embeddings, got {len(vectors)}")
        return vectors


def batch_count(n_items: int, batch_size: int) -> int:
    return math.ceil(n_items / batch_size)
