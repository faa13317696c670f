"""Chat-completion HTTP client with bounded retries and in-flight limit."""

from __future__ import annotations

import logging
import threading
import time
from typing import Any, Callable, Sequence

import requests

from .prompts import ChatTurn

log = logging.getLogger(__name__)

_ROLES = {"system": "system", "human": "user", "assistant": "assistant"}


class BackendUnavailable(RuntimeError):
    pass


class ChatClient:
    """Speaks the OpenAI-style ``/chat/completions`` JSON shape.

    Requests ``n`` samples at once; if the server returns fewer choices the
    rest are fetched with sequential single-sample calls.
    """

    def __init__(
        self,
        endpoint: str,
        model: str = "default",
        api_key: str | None = None,
        *,
        timeout: float = 120.0,
        attempts: int = 3,
        backoff: float = 1.0,
        max_inflight: int = 8,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not endpoint:
            raise BackendUnavailable("no chat endpoint configured")
        url = endpoint.rstrip("/")
        if not url.endswith("/chat/completions"):
            url += "/chat/completions"
        self.url = url
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.attempts = attempts
        self.backoff = backoff
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_inflight)
        self._session = requests.Session()

    def _post(self, payload: dict[str, Any]) -> dict[str, Any]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last: Exception | None = None
        for attempt in range(self.attempts):
            try:
                with self._slots:
                    resp = self._session.post(self.url, json=payload, headers=headers, timeout=self.timeout)
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise requests.HTTPError(f"HTTP {resp.status_code}", response=resp)
                if resp.status_code >= 400:
                    raise BackendUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
                return resp.json()
            except (requests.ConnectionError, requests.Timeout, requests.HTTPError, ValueError) as exc:
                last = exc
                log.warning("chat call failed (attempt %d/%d): %s", attempt + 1, self.attempts, exc)
                if attempt + 1 < self.attempts:
                    self._sleep(self.backoff * 2**attempt)
        raise BackendUnavailable(f"chat endpoint {self.url} failed after {self.attempts} attempts: {last}")

    def complete(self, turns: Sequence[ChatTurn], n: int = 1, temperature: float = 1.0) -> list[str]:
        messages = [{"role": _ROLES[t.role], "content": t.content} for t in turns]
        payload: dict[str, Any] = {"model": self.model, "messages": messages, "temperature": temperature}
        if n > 1:
            payload["n"] = n
        texts = self._texts(self._post(payload))
        while len(texts) < n:
            single = dict(payload)
            single.pop("n", None)
            more = self._texts(self._post(single))
            if not more:
                raise BackendUnavailable("chat endpoint returned no choices")
            texts.extend(more)
        return texts[:n]

    @staticmethod
    def _texts(body: dict[str, Any]) -> list[str]:
        try:
            return [c["message"]["content"] or "" for c in body["choices"]]
        except (KeyError, TypeError) as exc:
            raise BackendUnavailable(f"malformed chat response: {exc}") from exc
