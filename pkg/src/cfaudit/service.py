"""Minimal client for chat-completion style HTTP endpoints."""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Mapping

import httpx

from .core import ConfigError, ServiceError

log = logging.getLogger(__name__)

_RETRY_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


@dataclass(frozen=True)
class GenServiceConfig:
    endpoint: str
    model: str = "default"
    concurrency: int = 4
    timeout: float = 60.0
    retries: int = 3
    temperature: float = 0.0
    max_tokens: int = 1024
    backoff: float = 0.5
    headers: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.endpoint:
            raise ConfigError("service endpoint is required")
        if self.concurrency < 1:
            raise ConfigError("concurrency must be >= 1")
        if self.timeout <= 0:
            raise ConfigError("timeout must be positive")
        if self.retries < 0:
            raise ConfigError("retries must be >= 0")

    @classmethod
    def from_dict(cls, d: Mapping) -> "GenServiceConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown service options {sorted(extra)}")
        return cls(**d)


class ChatClient:
    """Posts ``{"model", "messages", ...}`` and returns the first choice's text.

    Transport failures and retryable status codes are retried ``retries``
    times; after that :class:`ServiceError` is raised. When ``record_bodies``
    is set, every request/response pair is kept in ``transcript``.
    """

    def __init__(self, config: GenServiceConfig, *, transport: httpx.BaseTransport | None = None,
                 record_bodies: bool = False, sleep=time.sleep):
        self.config = config
        self._http = httpx.Client(timeout=config.timeout, transport=transport, headers=dict(config.headers))
        self.record_bodies = record_bodies
        self.transcript: list[dict] = []
        self._lock = threading.Lock()
        self._sleep = sleep

    def close(self):
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def complete(self, messages: list[dict], *, max_tokens: int | None = None) -> str:
        cfg = self.config
        body = {
            "model": cfg.model,
            "messages": messages,
            "temperature": cfg.temperature,
            "max_tokens": max_tokens or cfg.max_tokens,
        }
        last_error = None
        for attempt in range(cfg.retries + 1):
            if attempt:
                self._sleep(cfg.backoff * attempt)
            try:
                resp = self._http.post(cfg.endpoint, json=body)
            except httpx.HTTPError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                log.warning("request failed (attempt %d): %s", attempt + 1, last_error)
                continue
            if resp.status_code in _RETRY_STATUS:
                last_error = f"HTTP {resp.status_code}"
                log.warning("retryable status %s (attempt %d)", resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise ServiceError(f"service answered HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                payload = resp.json()
                text = payload["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise ServiceError(f"unexpected response shape: {exc}") from exc
            if self.record_bodies:
                with self._lock:
                    self.transcript.append({"request": body, "response": payload})
            return text if isinstance(text, str) else str(text)
        raise ServiceError(f"service unreachable after {cfg.retries + 1} attempts ({last_error})")
