import math

import numpy as np
import pytest

from decisionuq.backends import QueryContext, ScriptedBackend
from decisionuq.calibration import (BinSpec, CalibrationRecord, aurac, bootstrap_ci, ece, prompt_confidence,
                                    reliability_diagram)
from decisionuq.errors import NoRecords, UnparseableResponse


def _records(pred, real, util=None):
    util = [1 - r for r in real] if util is None else util
    return [CalibrationRecord(f"q{i:04d}", float(p), float(r), float(u))
            for i, (p, r, u) in enumerate(zip(pred, real, util))]


def classification_ece(confidence, correct, n_bins, scheme):
    """Textbook ECE over confidence bins, written without the package's helpers."""
    n = len(confidence)
    if scheme == "equal-width":
        groups = {}
        for i in range(n):
            risk = 1.0 - confidence[i]
            k = min(int(risk * n_bins), n_bins - 1)  # same partition of the risk axis
            groups.setdefault(k, []).append(i)
        members = list(groups.values())
    else:
        order = sorted(range(n), key=lambda i: (1.0 - confidence[i], i))
        sizes = [n // n_bins + (1 if k < n % n_bins else 0) for k in range(n_bins)]
        members, start = [], 0
        for s in sizes:
            members.append(order[start:start + s])
            start += s
    total = 0.0
    for group in members:
        if not group:
            continue
        acc = sum(correct[i] for i in group) / len(group)
        conf = sum(confidence[i] for i in group) / len(group)
        total += len(group) / n * abs(acc - conf)
    return total


def test_ece_examples():
    rng = np.random.default_rng(0)
    p = rng.random(50)
    assert ece(_records(p, p)) == 0.0
    # two equal bins (equal-width, 2 bins) with gaps 0.1 and 0.3
    recs = _records([0.2, 0.2, 0.7, 0.7], [0.3, 0.3, 1.0, 1.0])
    assert ece(recs, BinSpec("equal-width", 2)) == pytest.approx(0.2, abs=1e-12)
    with pytest.raises(NoRecords):
        ece([])


@pytest.mark.parametrize("scheme", ["equal-mass", "equal-width"])
def test_ece_matches_classification_ece(scheme):
    for trial in range(10):
        rng = np.random.default_rng(100 + trial)
        n = int(rng.integers(20, 500))
        conf = rng.random(n)
        correct = (rng.random(n) < conf ** 0.7).astype(float)
        recs = _records(1 - conf, 1 - correct, correct)
        assert abs(ece(recs, BinSpec(scheme, 10)) - classification_ece(conf, correct, 10, scheme)) < 1e-12


def test_ece_permutation_invariant_and_bounded():
    rng = np.random.default_rng(3)
    p, r = rng.random(200), rng.random(200)
    recs = _records(p, r)
    perm = [recs[i] for i in rng.permutation(200)]
    assert ece(perm) == pytest.approx(ece(recs), abs=1e-12)
    d = reliability_diagram(recs)
    assert 0 <= ece(recs) <= max(abs(b.gap) for b in d.bins) + 1e-12


def test_reliability_examples():
    recs = _records([0.05] * 7, [0.0, 0.1, 0.1, 0.0, 0.0, 0.2, 0.0])
    d = reliability_diagram(recs, BinSpec("equal-width", 10))
    full = [b for b in d.bins if b.count]
    assert len(full) == 1 and full[0].count == 7
    assert full[0].mean_realized == pytest.approx(0.4 / 7)
    assert ece(recs, BinSpec("equal-width", 10)) == pytest.approx(abs(0.4 / 7 - 0.05))

    rng = np.random.default_rng(1)
    p = rng.uniform(0, 0.9, 1000)
    d = reliability_diagram(_records(p, p + 0.1))
    assert all(b.gap == pytest.approx(0.1) for b in d.bins)
    assert len(d.overconfident_bins()) == 10
    assert [b.count for b in d.bins] == [100] * 10
    assert d.total == 1000
    assert all(a.upper <= b.upper for a, b in zip(d.bins, d.bins[1:]))


def test_reliability_outputs():
    rng = np.random.default_rng(2)
    p = rng.random(100)
    d = reliability_diagram(_records(p, np.clip(p + 0.05, 0, 1)), band_sims=200)
    csv = d.to_csv()
    assert csv.splitlines()[0].startswith("lower,upper,count")
    assert len(csv.splitlines()) == 11
    assert d.to_svg().startswith("<svg")


def _aurac_scan(u, v, ids, k=100):
    order = sorted(range(len(u)), key=lambda i: (u[i], ids[i]))
    vals = []
    for j in range(k):
        keep = max(1, math.ceil((k - j) * len(u) / k))
        vals.append(sum(v[i] for i in order[:keep]) / keep)
    return sum(vals) / k


def test_aurac_examples():
    assert aurac([0.3, 0.1, 0.9], [0.6] * 3) == pytest.approx(0.6)
    n = 50
    util = [1.0] * (n // 2) + [0.0] * (n // 2)
    unc = [1 - x for x in util]
    ids = [f"q{i}" for i in range(n)]
    assert aurac(unc, util, ids) == pytest.approx(_aurac_scan(unc, util, ids), abs=1e-12)
    rng = np.random.default_rng(4)
    for _ in range(5):
        m = int(rng.integers(2, 300))
        u, v = rng.integers(0, 5, m) / 4, rng.random(m)
        ids = list(range(m))
        assert aurac(u, v, ids) == pytest.approx(_aurac_scan(u, v, ids), abs=1e-12)


def test_aurac_null():
    rng = np.random.default_rng(5)
    v = (rng.random(20000) < 0.4).astype(float)
    assert abs(aurac(rng.random(20000), v) - v.mean()) < 0.02


def test_aurac_informative_beats_noise():
    rng = np.random.default_rng(6)
    util = (rng.random(400) < 0.5).astype(float)
    assert aurac(1 - util, util) >= aurac(rng.random(400), util)


def test_bootstrap_examples():
    recs = list(range(30))
    assert bootstrap_ci(lambda r: 0.7, recs, n_sims=100) == (0.7, 0.7, 0.7)
    rng = np.random.default_rng(7)
    x = np.zeros(1000)
    x[rng.permutation(1000)[:500]] = 1.0
    point, lo, hi = bootstrap_ci(np.mean, x, n_sims=10000, seed=1)
    assert point == 0.5
    assert hi - lo == pytest.approx(2 * 1.96 * 0.0158, rel=0.2)
    assert bootstrap_ci(np.mean, x, n_sims=2000, seed=3) == bootstrap_ci(np.mean, x, n_sims=2000, seed=3)
    assert bootstrap_ci(np.mean, x, n_sims=2500, seed=3, workers=4) == \
        bootstrap_ci(np.mean, x, n_sims=2500, seed=3, workers=1)
    with pytest.raises(NoRecords):
        bootstrap_ci(np.mean, [])


CTX = QueryContext("q", "What is the capital of France?")


def test_prompt_confidence_parsing():
    assert prompt_confidence("verb_2s", CTX, "Paris", backend=ScriptedBackend(["90%"])) == pytest.approx(0.9)
    assert prompt_confidence("p_true", CTX, "Paris", ["Paris", "Lyon"],
                             backend=ScriptedBackend(["(A) True"])) == 1.0
    assert prompt_confidence("p_true", CTX, "Paris", ["Paris"], backend=ScriptedBackend(["(B)"])) == 0.0
    with pytest.raises(UnparseableResponse):
        prompt_confidence("verb_2s", CTX, "Paris", backend=ScriptedBackend(["hmm"]))


def test_p_true_prompt_contains_peers():
    b = ScriptedBackend(["(A)"])
    prompt_confidence("p_true", CTX, "Paris", ["Paris", "Marseille"], backend=b)
    assert "Marseille" in b.prompts[0] and CTX.x_star in b.prompts[0]
    with pytest.raises(ValueError):
        prompt_confidence("p_true", CTX, "Paris", [], backend=b)


def test_oracle_calibration_small():
    from decisionuq.harness.synthetic import calibration_testbed
    recs = calibration_testbed(n_queries=300, seed=1)
    sharp = calibration_testbed(n_queries=300, sharpen=3.0, seed=1)
    assert ece(sharp) > ece(recs)
