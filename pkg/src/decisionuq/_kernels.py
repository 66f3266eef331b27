"""Numeric inner loops, compiled with numba when available.

Set ``DECISIONUQ_DISABLE_NUMBA=1`` to force the pure-numpy path. Both paths
take their random draws as explicit inputs, so they return the same values
for the same seed; only the float summation order can differ in the last ulp.
"""
import os

import numpy as np

_DISABLED = os.environ.get("DECISIONUQ_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    if _DISABLED:
        raise ImportError
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    njit = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED


# ---------------------------------------------------------------------------
# pure numpy versions
# ---------------------------------------------------------------------------

def _np_permutation_aucs(perms, delta, weights):
    return (delta[perms] * weights[None, :]).sum(axis=1)


def _np_subsample_auc_diffs(idx, rank_a, rank_b, base, delta):
    k = idx.shape[1]
    w = (k - np.arange(k, dtype=np.float64)) / (k * (k + 1.0))
    base_mean = base[idx].mean(axis=1)
    out = np.empty(idx.shape[0])
    for s in range(idx.shape[0]):
        sub = idx[s]
        da = delta[sub[np.argsort(rank_a[sub], kind="stable")]]
        db = delta[sub[np.argsort(rank_b[sub], kind="stable")]]
        out[s] = (base_mean[s] + (w * da).sum()) - (base_mean[s] + (w * db).sum())
    return out


def _np_chain_terms(chain_means):
    n_cand, n_chain = chain_means.shape
    pooled = np.zeros(n_cand)
    mins = np.empty(n_chain)
    for i in range(n_chain):
        col = chain_means[:, i]
        pooled += col
        mins[i] = col.min()
    pooled /= n_chain
    term2 = 0.0
    for i in range(n_chain):
        term2 += mins[i]
    term2 /= n_chain
    return pooled.min(), term2, mins


def _np_binned_sums(bin_idx, pred, real, n_bins):
    counts = np.bincount(bin_idx, minlength=n_bins).astype(np.int64)
    sp = np.bincount(bin_idx, weights=pred, minlength=n_bins)
    sr = np.bincount(bin_idx, weights=real, minlength=n_bins)
    return counts, sp, sr


# ---------------------------------------------------------------------------
# numba versions
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _nb_permutation_aucs(perms, delta, weights):
        reps, m = perms.shape
        out = np.empty(reps)
        for r in range(reps):
            acc = 0.0
            for k in range(m):
                acc += weights[k] * delta[perms[r, k]]
            out[r] = acc
        return out

    @njit(cache=True)
    def _nb_subsample_auc_diffs(idx, rank_a, rank_b, base, delta):
        sims, k = idx.shape
        out = np.empty(sims)
        w = np.empty(k)
        for j in range(k):
            w[j] = (k - j) / (k * (k + 1.0))
        ra = np.empty(k, dtype=np.int64)
        rb = np.empty(k, dtype=np.int64)
        for s in range(sims):
            bsum = 0.0
            for j in range(k):
                bsum += base[idx[s, j]]
                ra[j] = rank_a[idx[s, j]]
                rb[j] = rank_b[idx[s, j]]
            bmean = bsum / k
            oa = np.argsort(ra, kind="mergesort")
            ob = np.argsort(rb, kind="mergesort")
            acc_a = 0.0
            acc_b = 0.0
            for j in range(k):
                acc_a += w[j] * delta[idx[s, oa[j]]]
                acc_b += w[j] * delta[idx[s, ob[j]]]
            out[s] = (bmean + acc_a) - (bmean + acc_b)
        return out

    @njit(cache=True)
    def _nb_chain_terms(chain_means):
        n_cand, n_chain = chain_means.shape
        pooled = np.zeros(n_cand)
        mins = np.empty(n_chain)
        for i in range(n_chain):
            lo = np.inf
            for c in range(n_cand):
                v = chain_means[c, i]
                pooled[c] += v
                if v < lo:
                    lo = v
            mins[i] = lo
        best = np.inf
        for c in range(n_cand):
            v = pooled[c] / n_chain
            if v < best:
                best = v
        term2 = 0.0
        for i in range(n_chain):
            term2 += mins[i]
        return best, term2 / n_chain, mins

    @njit(cache=True)
    def _nb_binned_sums(bin_idx, pred, real, n_bins):
        counts = np.zeros(n_bins, dtype=np.int64)
        sp = np.zeros(n_bins)
        sr = np.zeros(n_bins)
        for i in range(bin_idx.shape[0]):
            b = bin_idx[i]
            counts[b] += 1
            sp[b] += pred[i]
            sr[b] += real[i]
        return counts, sp, sr


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def permutation_aucs(perms, delta, weights, use_numba=None):
    """Rank-weighted sums ``sum_k weights[k] * delta[perms[r, k]]`` per row."""
    perms = np.ascontiguousarray(perms, dtype=np.int64)
    delta = np.ascontiguousarray(delta, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if _pick(use_numba):
        return _nb_permutation_aucs(perms, delta, weights)
    return _np_permutation_aucs(perms, delta, weights)


def subsample_auc_diffs(idx, rank_a, rank_b, base, delta, use_numba=None):
    """AUC-DF(a) - AUC-DF(b) for each row of subsample indices ``idx``."""
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    rank_a = np.ascontiguousarray(rank_a, dtype=np.int64)
    rank_b = np.ascontiguousarray(rank_b, dtype=np.int64)
    base = np.ascontiguousarray(base, dtype=np.float64)
    delta = np.ascontiguousarray(delta, dtype=np.float64)
    if _pick(use_numba):
        return _nb_subsample_auc_diffs(idx, rank_a, rank_b, base, delta)
    return _np_subsample_auc_diffs(idx, rank_a, rank_b, base, delta)


def chain_terms(chain_means, use_numba=None):
    """Pooled min-of-means and mean-of-mins over a (candidates, chains) array.

    Both terms accumulate the same per-chain values in the same order, so
    ``term1 >= term2`` holds exactly in floating point.
    """
    chain_means = np.ascontiguousarray(chain_means, dtype=np.float64)
    if _pick(use_numba):
        return _nb_chain_terms(chain_means)
    return _np_chain_terms(chain_means)


def binned_sums(bin_idx, pred, real, n_bins, use_numba=None):
    bin_idx = np.ascontiguousarray(bin_idx, dtype=np.int64)
    pred = np.ascontiguousarray(pred, dtype=np.float64)
    real = np.ascontiguousarray(real, dtype=np.float64)
    if _pick(use_numba):
        return _nb_binned_sums(bin_idx, pred, real, n_bins)
    return _np_binned_sums(bin_idx, pred, real, n_bins)


def _pick(use_numba):
    if use_numba is None:
        return USE_NUMBA
    if use_numba and not HAVE_NUMBA:
        raise RuntimeError("numba is not available")
    return bool(use_numba)
