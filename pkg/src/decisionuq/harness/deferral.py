"""Deferral curves, AUC-DF, the permutation test and the subsampling bootstrap.

With queries sorted by decreasing score (ties by id) and
``delta = exp_utils - base_utils`` in that order, the curve is
``curve[m] = mean(base) + sum(delta[:m]) / M`` and its grid mean is

    auc_df = mean(base) + sum_k (M - k) * delta[k] / (M * (M + 1)),   k = 0..M-1

so every AUC-DF evaluation reduces to a rank-weighted sum of ``delta``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import _kernels
from ..errors import LengthMismatch


@dataclass
class DeferralCurve:
    values: np.ndarray
    order: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    @property
    def n_queries(self):
        return len(self.values) - 1

    def __len__(self):
        return len(self.values)


@dataclass
class DifferenceSummary:
    median: float
    q25: float
    q75: float

    def __post_init__(self):
        if not self.q25 <= self.median <= self.q75:
            raise ValueError("percentiles out of order")

    def format(self, digits: int = 2) -> str:
        return f"{self.median:.{digits}f} [{self.q25:.{digits}f}, {self.q75:.{digits}f}]"

    def __str__(self):
        return self.format()


@dataclass
class DeferralComparison:
    auc: dict
    p_value: float | None
    difference: DifferenceSummary | None

    def __post_init__(self):
        if self.p_value is not None and not 0.0 < self.p_value <= 1.0:
            raise ValueError("p-value must lie in (0, 1]")


def _aligned(*seqs):
    arrays = [np.asarray(s, dtype=np.float64) for s in seqs]
    n = len(arrays[0])
    if any(len(a) != n for a in arrays):
        raise LengthMismatch(f"sequence lengths differ: {[len(a) for a in arrays]}")
    if n == 0:
        raise LengthMismatch("need at least one query")
    return arrays


def deferral_order(scores, ids=None) -> np.ndarray:
    """Query indices by decreasing score; ties broken by ascending id."""
    scores = np.asarray(scores, dtype=np.float64)
    keys = list(range(len(scores))) if ids is None else list(ids)
    if len(keys) != len(scores):
        raise LengthMismatch("ids and scores differ in length")
    return np.array(sorted(range(len(scores)), key=lambda i: (-scores[i], keys[i])), dtype=np.int64)


def rank_weights(m: int) -> np.ndarray:
    k = np.arange(m, dtype=np.float64)
    return (m - k) / (m * (m + 1.0))


def deferral_curve(scores, base_utils, exp_utils, ids=None) -> DeferralCurve:
    scores, base, exp = _aligned(scores, base_utils, exp_utils)
    order = deferral_order(scores, ids)
    m = len(base)
    delta = (exp - base)[order]
    values = np.empty(m + 1)
    values[0] = base.mean()
    values[1:] = base.sum() / m + np.cumsum(delta) / m
    values[-1] = exp.mean()  # endpoint exactly, not via the running sum
    return DeferralCurve(values, [int(i) for i in order])


def auc_df(curve: DeferralCurve) -> float:
    return float(np.mean(curve.values))


def _auc_from_order(base, delta, order, use_numba=None):
    w = rank_weights(len(base))
    return float(base.mean() + _kernels.permutation_aucs(order[None, :], delta, w, use_numba)[0])


def permutation_test(scores, base_utils, exp_utils, reps: int = 10000, seed: int = 0, ids=None,
                     batch: int = 2000, use_numba=None) -> float:
    """One-sided p-value of the observed AUC-DF against uniformly random orderings."""
    scores, base, exp = _aligned(scores, base_utils, exp_utils)
    if reps < 1:
        raise ValueError("reps must be >= 1")
    m = len(base)
    delta = exp - base
    w = rank_weights(m)
    observed = _kernels.permutation_aucs(deferral_order(scores, ids)[None, :], delta, w, use_numba)[0]
    tol = 1e-12 * max(1.0, float(np.abs(delta).sum()))
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < reps:
        b = min(batch, reps - done)
        perms = rng.permuted(np.tile(np.arange(m, dtype=np.int64), (b, 1)), axis=1)
        aucs = _kernels.permutation_aucs(perms, delta, w, use_numba)
        hits += int(np.count_nonzero(aucs >= observed - tol))
        done += b
    return (1 + hits) / (reps + 1)


def bootstrap_compare(scores_a, scores_b, base_utils, exp_utils, sims: int = 1000,
                      fraction: float = 0.5, seed: int = 0, ids=None, use_numba=None):
    """AUC-DF(a) - AUC-DF(b) over subsamples drawn without replacement.

    Returns ``(DifferenceSummary, differences)``.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"subsample fraction must lie in (0, 1), got {fraction}")
    a, b, base, exp = _aligned(scores_a, scores_b, base_utils, exp_utils)
    m = len(base)
    k = max(1, int(round(fraction * m)))
    rank_a = np.empty(m, dtype=np.int64)
    rank_a[deferral_order(a, ids)] = np.arange(m)
    rank_b = np.empty(m, dtype=np.int64)
    rank_b[deferral_order(b, ids)] = np.arange(m)
    rng = np.random.default_rng(seed)
    idx = np.stack([rng.choice(m, size=k, replace=False) for _ in range(sims)])
    diffs = _kernels.subsample_auc_diffs(idx, rank_a, rank_b, base, exp - base, use_numba)
    q25, med, q75 = np.percentile(diffs, [25, 50, 75])
    return DifferenceSummary(float(med), float(q25), float(q75)), diffs


def compare_methods(scores: dict, base_utils, exp_utils, ids=None, reference: str = "random",
                    contrast: tuple | None = None, reps: int = 10000, sims: int = 1000,
                    fraction: float = 0.5, seed: int = 0) -> DeferralComparison:
    """AUC-DF for every method, p-value of the first non-reference method, one bootstrap contrast."""
    auc = {name: auc_df(deferral_curve(s, base_utils, exp_utils, ids)) for name, s in scores.items()}
    primary = next((n for n in scores if n != reference), None)
    p = None
    if primary is not None:
        p = permutation_test(scores[primary], base_utils, exp_utils, reps=reps, seed=seed, ids=ids)
    diff = None
    if contrast is not None and all(c in scores for c in contrast):
        diff, _ = bootstrap_compare(scores[contrast[0]], scores[contrast[1]], base_utils, exp_utils,
                                    sims=sims, fraction=fraction, seed=seed, ids=ids)
    return DeferralComparison(auc, p, diff)
