"""Minimal chat-completions HTTP client and a retry helper.

Wire format (request body POSTed to ``endpoint``)::

    {"model": str, "messages": [{"role": "system"|"user", "content": str}, ...],
     "max_tokens": int, "temperature": float}

The API key is read from an environment variable and sent as
``Authorization: Bearer <key>``. The reply text is taken from
``choices[0].message.content``.
"""

from __future__ import annotations

import logging
import os
import time
from typing import Callable, TypeVar

import httpx

logger = logging.getLogger(__name__)

T = TypeVar("T")

DEFAULT_API_KEY_ENV = "TANDEM_API_KEY"


class ChatError(RuntimeError):
    """A chat-completions call failed (transport, HTTP status, or bad payload)."""


class ChatCompletionsClient:
    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = DEFAULT_API_KEY_ENV,
        temperature: float = 0.7,
        timeout_s: float = 30.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.temperature = temperature
        self._client = httpx.Client(timeout=timeout_s, transport=transport)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, system: str, user: str, max_tokens: int) -> str:
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "max_tokens": max_tokens,
            "temperature": self.temperature,
        }
        try:
            resp = self._client.post(self.endpoint, json=payload, headers=self._headers())
            resp.raise_for_status()
            content = resp.json()["choices"][0]["message"]["content"]
        except httpx.HTTPError as exc:
            raise ChatError(f"chat request to {self.endpoint} failed: {exc}") from exc
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ChatError(f"malformed chat response from {self.endpoint}: {exc}") from exc
        if not isinstance(content, str):
            raise ChatError("chat response content is not a string")
        return content.strip()

    def close(self) -> None:
        self._client.close()


def call_with_retries(
    fn: Callable[[], T],
    retries: int,
    backoff_s: float,
    retry_on: tuple[type[BaseException], ...],
    sleep: Callable[[float], None] = time.sleep,
) -> T:
    """Call ``fn``; on ``retry_on`` errors retry up to ``retries`` times.

    The wait doubles after each failure, starting at ``backoff_s``. The last
    error propagates once retries are exhausted.
    """
    attempt = 0
    while True:
        try:
            return fn()
        except retry_on as exc:
            if attempt >= retries:
                raise
            delay = backoff_s * (2**attempt)
            logger.warning("attempt %d failed (%s); retrying in %.2fs", attempt + 1, exc, delay)
            sleep(delay)
            attempt += 1
