"""JSON-lines sample cache with replay and write-through wrappers."""
from __future__ import annotations

import threading
from pathlib import Path

from ..errors import CacheMiss
from .base import Backend
from .prompts import DEFAULT_TEMPLATE
from .types import CacheRecord, GenRequest, GenSample, now, request_key


class SampleCache:
    """Append-only store of CacheRecords, indexed by (request digest, draw index).

    With ``path=None`` the cache lives only in memory.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._draws: dict[tuple[str, int], GenSample] = {}
        self.records: list[CacheRecord] = []
        if self.path is not None and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        self._index(CacheRecord.from_json(line))

    def _index(self, record: CacheRecord):
        self.records.append(record)
        for s in record.samples:
            self._draws.setdefault((s.request_digest, s.draw_index), s)

    def __len__(self):
        return len(self.records)

    def lookup(self, digest: str, n: int) -> list[GenSample]:
        out = []
        for i in range(n):
            s = self._draws.get((digest, i))
            if s is None:
                raise CacheMiss(digest, i)
            out.append(s)
        return out

    def has(self, digest: str, n: int) -> bool:
        return all((digest, i) in self._draws for i in range(n))

    def append(self, record: CacheRecord):
        with self._lock:
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(record.to_json() + "\n")
            self._index(record)

    def digests(self) -> list[str]:
        return sorted({r.request_digest for r in self.records})


def _echo(backend_id, prompt, request: GenRequest) -> dict:
    key = request_key(backend_id, prompt, request)
    key["n_samples"] = request.n_samples
    key["query_id"] = request.context.query_id
    return key


class ReplayBackend(Backend):
    """Serves cached draws only; any miss raises CacheMiss naming the digest."""

    def __init__(self, cache: SampleCache, backend_id: str, template=DEFAULT_TEMPLATE):
        self.cache = cache
        self.backend_id = backend_id
        self.template = template

    def sample(self, request):
        return self.cache.lookup(self.digest_for(request), request.n_samples)


class RecordingBackend(Backend):
    """Write-through wrapper: every call to ``inner`` is stored as one CacheRecord."""

    def __init__(self, inner: Backend, cache: SampleCache):
        self.inner = inner
        self.cache = cache

    @property
    def backend_id(self):
        return self.inner.backend_id

    @property
    def template(self):
        return self.inner.template

    def sample(self, request):
        samples = self.inner.sample(request)
        prompt = self.inner.prompt_for(request)
        self.cache.append(CacheRecord(request_digest=samples[0].request_digest,
                                      request=_echo(self.backend_id, prompt, request),
                                      samples=list(samples), backend_id=self.backend_id,
                                      created_at=now()))
        return samples


class CachingBackend(RecordingBackend):
    """Replay when every requested draw is cached, otherwise sample and record.

    With ``offline=True`` a miss raises CacheMiss instead of calling ``inner``.
    """

    def __init__(self, inner: Backend, cache: SampleCache, offline: bool = False):
        super().__init__(inner, cache)
        self.offline = offline

    def sample(self, request):
        digest = self.inner.digest_for(request)
        if self.offline or self.cache.has(digest, request.n_samples):
            return self.cache.lookup(digest, request.n_samples)
        return super().sample(request)
