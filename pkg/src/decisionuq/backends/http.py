"""OpenAI-compatible chat-completions backend with bounded concurrency and retries."""
from __future__ import annotations

import logging
import os
import random
import threading
import time

import httpx

from ..errors import BackendError, BackendUnreachable, RateLimited
from .base import Backend
from .prompts import DEFAULT_TEMPLATE

log = logging.getLogger(__name__)

_limit_lock = threading.Lock()
_limit = threading.BoundedSemaphore(8)
_max_concurrency = 8


def set_max_concurrency(n: int):
    """Resize the process-wide cap on in-flight remote requests."""
    global _limit, _max_concurrency
    if n < 1:
        raise ValueError("max concurrency must be >= 1")
    with _limit_lock:
        _limit = threading.BoundedSemaphore(n)
        _max_concurrency = n


def max_concurrency() -> int:
    return _max_concurrency


def _retry_after(response) -> float | None:
    value = response.headers.get("retry-after")
    if value is None:
        return None
    try:
        return max(0.0, float(value))
    except ValueError:
        return None


class ChatCompletionsBackend(Backend):
    """Samples through ``POST {base_url}/chat/completions``.

    The rendered prompt is the user message; ``context.system`` (if set)
    becomes the system message. Providers that ignore ``n`` are topped up
    with further calls until ``n_samples`` texts are collected.
    """

    def __init__(self, model: str, base_url: str = "https://api.openai.com/v1",
                 api_key_env: str = "OPENAI_API_KEY", backend_id: str | None = None,
                 template=DEFAULT_TEMPLATE, max_attempts: int = 5, backoff: float = 1.0,
                 max_backoff: float = 60.0, timeout: float = 60.0, client: httpx.Client | None = None,
                 sleep=time.sleep):
        self.model = model
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.backend_id = backend_id or model
        self.template = template
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.max_backoff = max_backoff
        self.timeout = timeout
        self._client = client
        self._sleep = sleep
        self._rng = random.Random()

    @property
    def client(self) -> httpx.Client:
        if self._client is None:
            self._client = httpx.Client(timeout=self.timeout)
        return self._client

    def _headers(self):
        key = os.environ.get(self.api_key_env, "")
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _payload(self, prompt, request, n):
        messages = []
        if request.context.system:
            messages.append({"role": "system", "content": request.context.system})
        messages.append({"role": "user", "content": prompt})
        body = {"model": self.model, "messages": messages, "temperature": request.temperature, "n": n}
        if request.seed is not None:
            body["seed"] = int(request.seed)
        if request.max_length is not None:
            body["max_tokens"] = int(request.max_length)
        return body

    def _post(self, body) -> dict:
        url = f"{self.base_url}/chat/completions"
        last = None
        for attempt in range(self.max_attempts):
            wait = None
            try:
                with _limit:
                    response = self.client.post(url, json=body, headers=self._headers())
            except httpx.HTTPError as exc:
                last = BackendUnreachable(f"{url}: {exc}")
            else:
                if response.status_code == 200:
                    return response.json()
                if response.status_code == 429:
                    last = RateLimited(f"{url}: rate limited (429)")
                    wait = _retry_after(response)
                elif response.status_code >= 500:
                    last = BackendUnreachable(f"{url}: server error {response.status_code}")
                    wait = _retry_after(response)
                else:
                    raise BackendError(f"{url}: HTTP {response.status_code}: {response.text[:200]}")
            if attempt + 1 < self.max_attempts:
                if wait is None:
                    base = min(self.max_backoff, self.backoff * 2 ** attempt)
                    wait = base * (0.5 + self._rng.random())
                log.warning("%s attempt %d failed (%s); retrying in %.2fs", self.backend_id,
                            attempt + 1, last, wait)
                self._sleep(wait)
        raise last

    def _generate(self, prompt, request):
        texts = []
        while len(texts) < request.n_samples:
            data = self._post(self._payload(prompt, request, request.n_samples - len(texts)))
            choices = data.get("choices") or []
            if not choices:
                raise BackendError(f"{self.backend_id}: response has no choices")
            for choice in choices:
                msg = choice.get("message") or {}
                texts.append(msg.get("content") or "")
        return texts[:request.n_samples]
