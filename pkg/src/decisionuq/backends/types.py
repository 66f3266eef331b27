"""Request / sample records shared by every backend."""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

from .prompts import PromptTemplate


@dataclass(frozen=True)
class QueryContext:
    """One ICL query: optional system/instruction text, demos ``(x, y)`` and test input."""

    query_id: str
    x_star: str
    demos: tuple = ()
    instruction: Optional[str] = None
    system: Optional[str] = None
    task: str = ""

    def __post_init__(self):
        object.__setattr__(self, "demos", tuple((str(x), str(y)) for x, y in self.demos))

    @property
    def n_demos(self):
        return len(self.demos)

    def with_demos(self, extra) -> "QueryContext":
        return replace(self, demos=self.demos + tuple(extra))

    def with_input(self, x: str) -> "QueryContext":
        return replace(self, x_star=x)

    def to_dict(self):
        d = asdict(self)
        d["demos"] = [list(p) for p in self.demos]
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(query_id=d["query_id"], x_star=d["x_star"], demos=tuple(map(tuple, d.get("demos", ()))),
                   instruction=d.get("instruction"), system=d.get("system"), task=d.get("task", ""))


@dataclass(frozen=True)
class GenRequest:
    context: QueryContext
    n_samples: int = 1
    temperature: float = 1.0
    seed: Optional[int] = None
    max_length: Optional[int] = None
    template: Optional[PromptTemplate] = None

    def __post_init__(self):
        if int(self.n_samples) < 1:
            raise ValueError("n_samples must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")


@dataclass(frozen=True)
class GenSample:
    text: str
    backend_id: str
    request_digest: str
    draw_index: int
    timestamp: float = field(default=0.0, compare=False)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(text=d["text"], backend_id=d["backend_id"], request_digest=d["request_digest"],
                   draw_index=int(d["draw_index"]), timestamp=float(d.get("timestamp", 0.0)))


@dataclass
class CacheRecord:
    request_digest: str
    request: dict
    samples: list
    backend_id: str
    created_at: float = 0.0

    def __post_init__(self):
        n = self.request.get("n_samples")
        if n is not None and len(self.samples) != n:
            raise ValueError(f"cache record holds {len(self.samples)} samples, request asked for {n}")

    def to_json(self) -> str:
        return json.dumps({"request_digest": self.request_digest, "request": self.request,
                           "samples": [s.to_dict() for s in self.samples],
                           "backend_id": self.backend_id, "created_at": self.created_at},
                          ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "CacheRecord":
        d = json.loads(line)
        return cls(request_digest=d["request_digest"], request=d["request"],
                   samples=[GenSample.from_dict(s) for s in d["samples"]],
                   backend_id=d["backend_id"], created_at=d.get("created_at", 0.0))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def request_key(backend_id: str, prompt: str, request: GenRequest) -> dict:
    """The fields that identify a draw sequence (draw index excluded)."""
    return {"backend": backend_id, "prompt": prompt, "system": request.context.system,
            "temperature": float(request.temperature), "max_length": request.max_length,
            "seed": request.seed}


def digest_of(key: dict) -> str:
    return hashlib.sha256(canonical_json(key).encode("utf-8")).hexdigest()


def now() -> float:
    return time.time()
