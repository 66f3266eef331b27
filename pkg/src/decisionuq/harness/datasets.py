"""Dataset ingestion: QA JSON-lines and parallel TSV."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DatasetError

FORMATS = ("qa-jsonl", "parallel-tsv")


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    input: str
    references: tuple
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        refs = tuple(str(r) for r in self.references)
        if not refs:
            raise DatasetError(f"record {self.id!r} has no reference")
        object.__setattr__(self, "references", refs)


def _qa_line(obj, lineno):
    if not isinstance(obj, dict):
        raise DatasetError("expected a JSON object", lineno)
    for key in ("id", "question", "answers"):
        if key not in obj:
            raise DatasetError(f"missing field {key!r}", lineno)
    answers = obj["answers"]
    if isinstance(answers, str) or not isinstance(answers, list) or not answers:
        raise DatasetError("'answers' must be a non-empty array", lineno)
    meta = {k: v for k, v in obj.items() if k not in ("id", "question", "answers")}
    return DatasetRecord(str(obj["id"]), str(obj["question"]), tuple(answers), meta)


def load_dataset(path, format: str = "qa-jsonl") -> list[DatasetRecord]:
    """Read records in file order. Line numbers in errors are 1-based."""
    if format not in FORMATS:
        raise DatasetError(f"unknown dataset format {format!r}; expected one of {FORMATS}")
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file {path} does not exist")
    records, seen = [], {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if format == "qa-jsonl":
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DatasetError(f"invalid JSON: {exc.msg}", lineno) from None
                rec = _qa_line(obj, lineno)
            else:
                parts = line.split("\t")
                if len(parts) != 2:
                    raise DatasetError(f"expected 2 tab-separated columns, got {len(parts)}", lineno)
                rec = DatasetRecord(str(len(records)), parts[0], (parts[1],), {"line": lineno})
            if rec.id in seen:
                raise DatasetError(f"duplicate id {rec.id!r} (first seen on line {seen[rec.id]})", lineno)
            seen[rec.id] = lineno
            records.append(rec)
    return records


def subsample(records, n: int | None, seed: int = 0) -> list[DatasetRecord]:
    """``n`` records drawn without replacement, kept in their original order."""
    records = list(records)
    if n is None or n >= len(records):
        return records
    if n < 1:
        raise ValueError("subsample size must be positive")
    keep = np.sort(np.random.default_rng(seed).choice(len(records), size=n, replace=False))
    return [records[i] for i in keep]
