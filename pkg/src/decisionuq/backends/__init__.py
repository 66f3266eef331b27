"""Uniform sampling interface over text generators."""
from __future__ import annotations

import hashlib

from .base import Backend, FunctionBackend, ScriptedBackend
from .cache import CachingBackend, RecordingBackend, ReplayBackend, SampleCache
from .http import ChatCompletionsBackend, max_concurrency, set_max_concurrency
from .prompts import DEFAULT_TEMPLATE, RAW_TEMPLATE, PromptTemplate, format_strict, render_prompt
from .types import CacheRecord, GenRequest, GenSample, QueryContext, digest_of, request_key


def sample(backend: Backend, request: GenRequest) -> list[GenSample]:
    return backend.sample(request)


def ask(backend: Backend, text: str, seed: int | None = None, tag: str = "ask",
        system: str | None = None) -> str:
    """Send one fully rendered prompt and return a single reply."""
    qid = f"{tag}-" + hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
    ctx = QueryContext(query_id=qid, x_star=text, system=system, task=tag)
    return backend.sample(GenRequest(ctx, n_samples=1, seed=seed, template=RAW_TEMPLATE))[0].text


__all__ = [
    "Backend", "FunctionBackend", "ScriptedBackend", "CachingBackend", "RecordingBackend",
    "ReplayBackend", "SampleCache", "ChatCompletionsBackend", "max_concurrency",
    "set_max_concurrency", "DEFAULT_TEMPLATE", "RAW_TEMPLATE", "PromptTemplate", "format_strict",
    "render_prompt", "CacheRecord", "GenRequest", "GenSample", "QueryContext", "digest_of",
    "request_key", "sample", "ask",
]
