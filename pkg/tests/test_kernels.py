import os
import subprocess
import sys

import numpy as np
import pytest

from decisionuq import _kernels

needs_numba = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")


@needs_numba
def test_paths_agree():
    rng = np.random.default_rng(0)
    m = 40
    delta = rng.normal(size=m)
    w = (m - np.arange(m)) / (m * (m + 1.0))
    perms = rng.permuted(np.tile(np.arange(m), (300, 1)), axis=1)
    a = _kernels.permutation_aucs(perms, delta, w, use_numba=True)
    b = _kernels.permutation_aucs(perms, delta, w, use_numba=False)
    assert np.allclose(a, b, rtol=0, atol=1e-13)

    base = rng.random(m)
    rank_a, rank_b = rng.permutation(m), rng.permutation(m)
    idx = np.stack([rng.choice(m, 20, replace=False) for _ in range(200)])
    assert np.allclose(_kernels.subsample_auc_diffs(idx, rank_a, rank_b, base, delta, use_numba=True),
                       _kernels.subsample_auc_diffs(idx, rank_a, rank_b, base, delta, use_numba=False),
                       rtol=0, atol=1e-13)

    cm = rng.random((6, 9))
    for x, y in zip(_kernels.chain_terms(cm, use_numba=True), _kernels.chain_terms(cm, use_numba=False)):
        assert np.allclose(x, y, rtol=0, atol=0)

    bins = rng.integers(0, 10, 500)
    pred, real = rng.random(500), rng.random(500)
    for x, y in zip(_kernels.binned_sums(bins, pred, real, 10, use_numba=True),
                    _kernels.binned_sums(bins, pred, real, 10, use_numba=False)):
        assert np.allclose(x, y, rtol=0, atol=1e-12)


def test_subsample_kernel_against_direct_recomputation():
    rng = np.random.default_rng(1)
    m = 15
    base, exp = rng.random(m), rng.random(m)
    delta = exp - base
    rank_a, rank_b = rng.permutation(m), rng.permutation(m)
    idx = np.stack([rng.choice(m, 7, replace=False) for _ in range(30)])
    got = _kernels.subsample_auc_diffs(idx, rank_a, rank_b, base, delta)
    for s, sub in enumerate(idx):
        def auc(rank):
            order = sorted(sub, key=lambda i: rank[i])
            curve = [base[sub].mean()]
            cur = list(base[sub])
            pos = {i: k for k, i in enumerate(sub)}
            for i in order:
                cur[pos[i]] = exp[i]
                curve.append(np.mean(cur))
            return np.mean(curve)
        assert got[s] == pytest.approx(auc(rank_a) - auc(rank_b), abs=1e-12)


def test_env_flag_disables_numba():
    code = "from decisionuq import _kernels; print(_kernels.USE_NUMBA)"
    env = dict(os.environ, DECISIONUQ_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"
