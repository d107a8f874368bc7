"""Minimal OpenAI-compatible HTTP client.

Two calls are needed: ``/chat/completions`` for agent turns and
``/completions`` with ``echo`` + ``logprobs`` for scoring text.
"""

from __future__ import annotations

import logging
import os
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from threading import BoundedSemaphore
from typing import Optional

import httpx

from .errors import EndpointError, EndpointTimeout, ProviderError

log = logging.getLogger(__name__)

RETRYABLE_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


@dataclass
class ChatResult:
    text: str
    latency: float
    correlation_id: str
    usage: dict = field(default_factory=dict)


class ChatClient:
    """Blocking chat-completions client with retries and an in-flight bound.

    The bearer token is read from the environment variable named by
    ``api_key_env``; it is never taken from config files.
    """

    def __init__(self, base_url: str, model: str, *, api_key_env: str = "OPENAI_API_KEY",
                 temperature: float = 1.0, top_p: float = 1.0, max_tokens: int = 400,
                 timeout: float = 60.0, max_retries: int = 3, max_concurrency: int = 8,
                 backoff: float = 0.5, transport: Optional[httpx.BaseTransport] = None):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.temperature = temperature
        self.top_p = top_p
        self.max_tokens = max_tokens
        self.max_retries = max(1, max_retries)
        self.max_concurrency = max(1, max_concurrency)
        self.backoff = backoff
        self._slots = BoundedSemaphore(self.max_concurrency)
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._http = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _post(self, path: str, body: dict) -> dict:
        url = f"{self.base_url}{path}"
        last: Exception = EndpointError("no attempt made")
        for attempt in range(self.max_retries):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    resp = self._http.post(url, json=body)
            except httpx.TimeoutException as exc:
                last = EndpointTimeout(f"timeout calling {url}: {exc}")
                continue
            except httpx.HTTPError as exc:
                last = EndpointError(f"transport error calling {url}: {exc}")
                continue
            if resp.status_code >= 400:
                last = EndpointError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
                if resp.status_code in RETRYABLE_STATUS:
                    log.warning("retrying %s after HTTP %s", url, resp.status_code)
                    continue
                raise last
            try:
                return resp.json()
            except ValueError as exc:
                raise EndpointError(f"non-JSON response from {url}") from exc
        raise last

    def complete(self, prompt: str, correlation_id: Optional[str] = None) -> ChatResult:
        cid = correlation_id or uuid.uuid4().hex
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
        }
        t0 = time.perf_counter()
        data = self._post("/chat/completions", body)
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise EndpointError(f"malformed chat response: {str(data)[:200]}") from exc
        return ChatResult(text or "", time.perf_counter() - t0, cid, data.get("usage") or {})

    def complete_many(self, prompts: list[str]) -> list:
        """Complete prompts concurrently; results line up with ``prompts``.

        Failed requests come back as the raised :class:`EndpointError`
        instance in their slot.
        """
        ids = [f"req-{i}" for i in range(len(prompts))]

        def one(pair):
            cid, prompt = pair
            try:
                return self.complete(prompt, cid)
            except EndpointError as exc:
                return exc

        with ThreadPoolExecutor(max_workers=self.max_concurrency) as pool:
            results = list(pool.map(one, zip(ids, prompts)))
        by_id = {r.correlation_id: r for r in results if isinstance(r, ChatResult)}
        return [by_id.get(cid, r) for cid, r in zip(ids, results)]

    def token_logprobs(self, text: str) -> list[float]:
        """Per-token log probabilities of ``text`` under the endpoint model."""
        body = {"model": self.model, "prompt": text, "max_tokens": 0, "echo": True, "logprobs": 0}
        try:
            data = self._post("/completions", body)
            values = data["choices"][0]["logprobs"]["token_logprobs"]
        except EndpointError as exc:
            raise ProviderError(str(exc)) from exc
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError("response carries no token_logprobs") from exc
        out = [float(v) for v in values if v is not None]
        if not out:
            raise ProviderError("provider returned no scored tokens")
        return out
