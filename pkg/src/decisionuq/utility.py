"""Utility (similarity) functions, the risk transform and utility matrices.

Every utility is normalised to ``[0, 1]``; the default risk is ``1 - S``.
"""
from __future__ import annotations

import json
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import BackendError, JudgeUnreachable, PairwiseError, UnparseableResponse

_WS = re.compile(r"\s+")
_NUMBER = re.compile(r"[-+]?\d+(?:\.\d+)?")

KINDS = ("exact-match", "token-f1", "chrf", "judge", "callable")


def normalize_text(text: str) -> str:
    return _WS.sub(" ", text.strip().lower())


def exact_match(hypothesis: str, reference: str) -> float:
    return 1.0 if normalize_text(hypothesis) == normalize_text(reference) else 0.0


def token_f1(hypothesis: str, reference: str) -> float:
    hyp = normalize_text(hypothesis).split()
    ref = normalize_text(reference).split()
    if not hyp or not ref:
        return 0.0
    common = sum((Counter(hyp) & Counter(ref)).values())
    if common == 0:
        return 0.0
    precision = common / len(hyp)
    recall = common / len(ref)
    return 2 * precision * recall / (precision + recall)


def _ngrams(seq, n):
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def chrf(hypothesis: str, reference: str, char_order: int = 6, word_order: int = 2,
         beta: float = 2.0) -> float:
    """chrF++-style score in [0, 1].

    Character n-grams are taken from the string with all whitespace removed,
    word n-grams from whitespace tokens (punctuation stays attached). The
    F-beta score is computed per order and averaged uniformly over the orders
    for which the reference has at least one n-gram.
    """
    hyp_chars = _WS.sub("", hypothesis)
    ref_chars = _WS.sub("", reference)
    hyp_words = hypothesis.split()
    ref_words = reference.split()
    b2 = beta * beta
    scores = []
    for hyp_seq, ref_seq, max_n in ((hyp_chars, ref_chars, char_order),
                                    (hyp_words, ref_words, word_order)):
        for n in range(1, max_n + 1):
            ref_ng = _ngrams(ref_seq, n)
            ref_total = sum(ref_ng.values())
            if ref_total == 0:
                continue
            hyp_ng = _ngrams(hyp_seq, n)
            hyp_total = sum(hyp_ng.values())
            matches = sum((hyp_ng & ref_ng).values())
            if hyp_total == 0 or matches == 0:
                scores.append(0.0)
                continue
            p = matches / hyp_total
            r = matches / ref_total
            scores.append((1 + b2) * p * r / (b2 * p + r))
    if not scores:
        # reference has no n-grams at all (empty reference)
        return 1.0 if not hyp_chars else 0.0
    return float(sum(scores) / len(scores))


# ---------------------------------------------------------------------------
# judge templates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParseRule:
    """How to turn a free-text reply into a number in [0, 1].

    ``kind="last-number"`` takes the last numeric token and maps
    ``[scale_min, scale_max]`` linearly onto ``[0, 1]``. ``kind="choice"``
    matches the regexes in ``choices`` in order (case-insensitive) and
    returns the first hit's value.
    """

    kind: str = "last-number"
    scale_min: float = 0.0
    scale_max: float = 100.0
    choices: tuple = ()

    def parse(self, text: str) -> float | None:
        if self.kind == "last-number":
            nums = _NUMBER.findall(text)
            if not nums:
                return None
            v = (float(nums[-1]) - self.scale_min) / (self.scale_max - self.scale_min)
            return float(min(1.0, max(0.0, v)))
        if self.kind == "choice":
            for pattern, value in self.choices:
                if re.search(pattern, text, flags=re.IGNORECASE):
                    return float(value)
            return None
        raise ValueError(f"unknown parse rule kind {self.kind!r}")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ParseRule":
        choices = tuple((str(k), float(v)) for k, v in d.get("choices", {}).items()) \
            if isinstance(d.get("choices"), Mapping) else tuple(tuple(c) for c in d.get("choices", ()))
        return cls(kind=d.get("kind", "last-number"),
                   scale_min=float(d.get("scale_min", 0.0)),
                   scale_max=float(d.get("scale_max", 100.0)),
                   choices=choices)


@dataclass(frozen=True)
class TextTemplate:
    """A prompt with named ``{placeholders}`` plus the rule for parsing replies."""

    text: str
    parse: ParseRule = ParseRule()
    template_id: str = "inline"
    max_attempts: int = 3

    def render(self, **values: str) -> str:
        from .backends.prompts import format_strict
        return format_strict(self.text, values)

    @classmethod
    def load(cls, path: str | Path) -> "TextTemplate":
        """Load ``path`` and its sidecar descriptor ``path + '.json'`` (if any)."""
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        side = path.with_name(path.name + ".json")
        desc = json.loads(side.read_text(encoding="utf-8")) if side.exists() else {}
        return cls(text=text, parse=ParseRule.from_dict(desc.get("parse", desc)),
                   template_id=desc.get("id", path.stem),
                   max_attempts=int(desc.get("max_attempts", 3)))


def ask_and_parse(backend, prompt: str, rule: ParseRule, max_attempts: int = 3,
                  seed: int | None = None, tag: str = "judge") -> float:
    """Send ``prompt`` to ``backend`` and parse the reply, retrying on parse failure."""
    from .backends import ask
    raw = None
    for attempt in range(max_attempts):
        try:
            raw = ask(backend, prompt, seed=None if seed is None else seed + attempt, tag=tag)
        except BackendError as exc:
            raise JudgeUnreachable(f"{tag} backend failed: {exc}", raw=raw) from exc
        value = rule.parse(raw)
        if value is not None:
            return value
    raise UnparseableResponse(f"{tag} reply unparseable after {max_attempts} attempts", raw)


def judge_utility(hypothesis: str, reference: str, question: str, judge, template: TextTemplate,
                  seed: int | None = None) -> float:
    prompt = template.render(question=question, reference=reference, hypothesis=hypothesis)
    return ask_and_parse(judge, prompt, template.parse, template.max_attempts, seed=seed, tag="judge")


# ---------------------------------------------------------------------------
# specs, transforms, matrices
# ---------------------------------------------------------------------------

@dataclass
class UtilitySpec:
    kind: str = "exact-match"
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown utility kind {self.kind!r}; expected one of {KINDS}")

    @property
    def deterministic(self) -> bool:
        return self.kind != "judge" and self.parameters.get("deterministic", True)

    @property
    def symmetric(self) -> bool:
        return self.kind in ("exact-match", "token-f1")

    def __call__(self, hypothesis: str, reference: str, question: str = "") -> float:
        p = self.parameters
        if self.kind == "exact-match":
            return exact_match(hypothesis, reference)
        if self.kind == "token-f1":
            return token_f1(hypothesis, reference)
        if self.kind == "chrf":
            return chrf(hypothesis, reference, char_order=p.get("char_order", 6),
                        word_order=p.get("word_order", 2), beta=p.get("beta", 2.0))
        if self.kind == "judge":
            return judge_utility(hypothesis, reference, question, p["backend"], p["template"],
                                 seed=p.get("seed"))
        return float(p["fn"](hypothesis, reference))


@dataclass(frozen=True)
class RiskTransform:
    """risk = shift - scale * S, with scale > 0."""

    scale: float = 1.0
    shift: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("risk transform must be strictly decreasing (scale > 0)")

    def __call__(self, utility):
        return self.shift - self.scale * np.asarray(utility, dtype=np.float64)

    def inverse(self, risk):
        return (self.shift - np.asarray(risk, dtype=np.float64)) / self.scale


DEFAULT_RISK = RiskTransform()


@dataclass
class UtilityMatrix:
    candidate_ids: list
    sample_ids: list
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.candidate_ids), len(self.sample_ids)):
            raise ValueError(f"matrix shape {self.values.shape} does not match ids "
                             f"({len(self.candidate_ids)}, {len(self.sample_ids)})")

    @property
    def shape(self):
        return self.values.shape

    def risks(self, transform: RiskTransform = DEFAULT_RISK) -> np.ndarray:
        return transform(self.values)


def _text_of(item):
    return item if isinstance(item, str) else item.text


def pairwise_matrix(candidates: Sequence, samples: Sequence, utility: UtilitySpec,
                    context=None, max_workers: int = 1) -> UtilityMatrix:
    """values[i, j] = S(candidates[i], samples[j]; context).

    Items may be plain strings or objects with a ``text`` attribute. For
    deterministic utilities each distinct text pair is scored once.
    """
    if len(candidates) == 0 or len(samples) == 0:
        raise ValueError("pairwise_matrix needs non-empty candidate and sample sequences")
    cand_text = [_text_of(c) for c in candidates]
    samp_text = [_text_of(s) for s in samples]
    question = "" if context is None else getattr(context, "x_star", str(context))

    if utility.deterministic:
        rows, row_idx = _unique(cand_text)
        cols, col_idx = _unique(samp_text)
        table = utility_table(rows, cols, utility, question, max_workers,
                              positions=(row_idx, col_idx))
        values = table[np.ix_(row_idx, col_idx)]
    else:
        values = utility_table(cand_text, samp_text, utility, question, max_workers)
    return UtilityMatrix(candidate_ids=[_id_of(c, i) for i, c in enumerate(candidates)],
                         sample_ids=[_id_of(s, j) for j, s in enumerate(samples)],
                         values=values)


def _unique(texts):
    index = {}
    inverse = np.empty(len(texts), dtype=np.int64)
    for k, t in enumerate(texts):
        inverse[k] = index.setdefault(t, len(index))
    return list(index), inverse


def utility_table(rows: Sequence[str], cols: Sequence[str], utility: UtilitySpec, question: str = "",
                  max_workers: int = 1, positions=None) -> np.ndarray:
    """Score every (row, col) text pair; errors carry the original (i, j) position."""

    def where(a, b):
        if positions is None:
            return a, b
        return int(np.flatnonzero(positions[0] == a)[0]), int(np.flatnonzero(positions[1] == b)[0])

    def run(job):
        a, b = job
        try:
            return utility(rows[a], cols[b], question)
        except Exception as exc:
            raise PairwiseError(*where(a, b), exc) from exc

    jobs = [(a, b) for a in range(len(rows)) for b in range(len(cols))]
    if max_workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            flat = list(pool.map(run, jobs))
    else:
        flat = [run(job) for job in jobs]
    return np.asarray(flat, dtype=np.float64).reshape(len(rows), len(cols))


def _id_of(item, index):
    if isinstance(item, str):
        return index
    return getattr(item, "draw_index", index)
