"""MBR / Gibbs prediction and the Bayes-risk uncertainty over finite sample sets."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, PoolTooSmall
from .utility import DEFAULT_RISK, RiskTransform, UtilityMatrix


@dataclass
class CandidateSet:
    context_id: str
    candidates: list

    def __post_init__(self):
        if len(self.candidates) == 0:
            raise ValueError("candidate set must be non-empty")

    def __len__(self):
        return len(self.candidates)

    @property
    def texts(self):
        return [c if isinstance(c, str) else c.text for c in self.candidates]


@dataclass
class SubjectiveUncertainty:
    value: float
    n_eval_samples: int
    standard_error: float
    predictor: str  # "mbr" or "gibbs"
    chosen_index: int | None = None


def split_samples(pool: Sequence, context_id: str = "", policy: str = "halves"):
    """Split a pool of draws into (CandidateSet, evaluation samples).

    ``policy="halves"`` takes the first ``len(pool) // 2`` draws as candidates
    and the rest for evaluation; ``"alternate"`` takes even positions as
    candidates.
    """
    pool = list(pool)
    if len(pool) < 2:
        raise PoolTooSmall(f"need at least 2 samples to split, got {len(pool)}")
    if policy == "halves":
        h = len(pool) // 2
        cands, evals = pool[:h], pool[h:]
    elif policy == "alternate":
        cands, evals = pool[0::2], pool[1::2]
    else:
        raise ValueError(f"unknown split policy {policy!r}")
    return CandidateSet(context_id, cands), evals


def _check(candidates, matrix):
    values = matrix.values if isinstance(matrix, UtilityMatrix) else np.asarray(matrix, dtype=np.float64)
    n = len(candidates) if candidates is not None else values.shape[0]
    if values.ndim != 2 or values.shape[0] != n or values.shape[1] == 0:
        raise DimensionMismatch(f"utility matrix of shape {values.shape} does not match "
                                f"{n} candidates")
    return values


def mbr_select(candidates: CandidateSet, eval_matrix: UtilityMatrix):
    """Return (chosen text, expected utility); ties go to the lowest index."""
    values = _check(candidates, eval_matrix)
    means = values.mean(axis=1)
    best = int(np.argmax(means))  # first maximum
    return candidates.texts[best], float(means[best])


def _jackknife_se(estimates: np.ndarray) -> float:
    n = len(estimates)
    if n < 2:
        return 0.0
    return float(np.sqrt((n - 1) / n * np.sum((estimates - estimates.mean()) ** 2)))


def bayes_risk(candidates: CandidateSet, eval_matrix: UtilityMatrix,
               transform: RiskTransform = DEFAULT_RISK) -> SubjectiveUncertainty:
    """min over candidates of the mean risk against the evaluation samples."""
    values = _check(candidates, eval_matrix)
    risks = transform(values)
    means = risks.mean(axis=1)
    best = int(np.argmin(means))
    n = risks.shape[1]
    if n > 1:
        loo = (risks.sum(axis=1, keepdims=True) - risks) / (n - 1)
        se = _jackknife_se(loo.min(axis=0))
    else:
        se = 0.0
    return SubjectiveUncertainty(float(means[best]), n, se, "mbr", best)


def gibbs_uncertainty(one_draw, eval_row, transform: RiskTransform = DEFAULT_RISK,
                      eval_samples: Sequence | None = None) -> SubjectiveUncertainty:
    """Mean risk of a single draw against evaluation samples that exclude it."""
    if eval_samples is not None and any(s is one_draw for s in eval_samples):
        raise ValueError("evaluation samples must not contain the Gibbs draw itself")
    row = np.asarray(eval_row.values if isinstance(eval_row, UtilityMatrix) else eval_row,
                     dtype=np.float64)
    if row.ndim == 2:
        if row.shape[0] != 1:
            raise DimensionMismatch(f"expected one row, got shape {row.shape}")
        row = row[0]
    if row.ndim != 1 or row.size == 0:
        raise DimensionMismatch(f"expected a non-empty row, got shape {row.shape}")
    risks = transform(row)
    n = risks.size
    se = float(risks.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return SubjectiveUncertainty(float(risks.mean()), n, se, "gibbs", 0)


def expected_gibbs_uncertainty(pool_matrix, transform: RiskTransform = DEFAULT_RISK) -> SubjectiveUncertainty:
    """Average leave-one-out Gibbs uncertainty over a square pool-vs-pool matrix."""
    values = np.asarray(pool_matrix.values if isinstance(pool_matrix, UtilityMatrix) else pool_matrix,
                        dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise DimensionMismatch(f"pool matrix must be square, got {values.shape}")
    n = values.shape[0]
    if n < 2:
        raise PoolTooSmall("need at least 2 draws for leave-one-out Gibbs uncertainty")
    risks = transform(values)
    off = ~np.eye(n, dtype=bool)
    per_draw = np.array([risks[i, off[i]].mean() for i in range(n)])
    se = float(per_draw.std(ddof=1) / np.sqrt(n))
    return SubjectiveUncertainty(float(per_draw.mean()), n - 1, se, "gibbs", None)
