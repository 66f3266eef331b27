import numpy as np
import pytest

from decisionuq.backends import GenRequest, QueryContext
from decisionuq.errors import DemoOutsideAlphabet, UnknownInput
from decisionuq.testbed import (DirCatModel, MixtureModel, OracleBackend, PosteriorState, eu_reference,
                                load_task, posterior_predictive, validate_convergence)
from decisionuq.utility import UtilitySpec, utility_table

EM = UtilitySpec("exact-match")
Y3 = ["y1", "y2", "y3"]


def test_predictive_examples():
    m = DirCatModel(["x"], Y3, 1.0)
    assert np.allclose(posterior_predictive(m.empty_state(), m, "x"), [1 / 3] * 3, atol=1e-15)
    s = m.state_from_demos([("x", "y2")])
    assert np.allclose(posterior_predictive(s, m, "x"), [0.25, 0.5, 0.25], atol=1e-15)
    with pytest.raises(UnknownInput):
        posterior_predictive(s, m, "z")
    with pytest.raises(DemoOutsideAlphabet):
        m.state_from_demos([("x", "nope")])
    with pytest.raises(ValueError):
        DirCatModel(["x"], Y3, 0.0)
    with pytest.raises(ValueError):
        PosteriorState(np.array([[-1, 0, 0]]))


def test_polya_urn_oracle():
    # urn with integer prior balls; keep histories whose first n draws match the counts
    alpha = np.array([1, 2, 1])
    counts = np.array([1, 0, 2])
    n = counts.sum()
    reps = 1_000_000
    rng = np.random.default_rng(0)
    balls = np.tile(alpha, (reps, 1)).astype(np.int64)
    seen = np.zeros((reps, 3), dtype=np.int64)
    for _ in range(n):
        u = rng.random(reps) * balls.sum(axis=1)
        pick = (u[:, None] >= np.cumsum(balls, axis=1)).sum(axis=1)
        balls[np.arange(reps), pick] += 1
        seen[np.arange(reps), pick] += 1
    keep = (seen == counts).all(axis=1)
    u = rng.random(reps) * balls.sum(axis=1)
    nxt = (u[:, None] >= np.cumsum(balls, axis=1)).sum(axis=1)[keep]
    model = DirCatModel(["x"], Y3, alpha)
    p = model.predictive(PosteriorState(counts[None]), "x")
    k = keep.sum()
    assert k > 10000
    for j in range(3):
        freq = np.mean(nxt == j)
        assert abs(freq - p[j]) <= 3 * np.sqrt(p[j] * (1 - p[j]) / k)


@pytest.mark.parametrize("seed", range(5))
def test_martingale(seed):
    rng = np.random.default_rng(seed)
    m = DirCatModel(["a", "b"], Y3, rng.uniform(0.1, 3, (2, 3)))
    s = PosteriorState(rng.integers(0, 5, (2, 3)))
    p = m.predictive(s, "a")
    mixed = sum(p[j] * m.predictive(s.update(0, j), "a") for j in range(3))
    assert np.allclose(mixed, p, atol=1e-12, rtol=0)
    mix = MixtureModel(["a"], ["u", "v"], rng.dirichlet([1, 1], size=(4, 1)))
    st = mix.state_from_demos([("a", "u")])
    q = mix.predictive(st, "a")
    back = sum(q[j] * mix.predictive(st.update(0, j), "a") for j in range(2))
    assert np.allclose(back, q, atol=1e-12, rtol=0)


def test_exchangeability():
    rng = np.random.default_rng(1)
    m = DirCatModel(["a", "b"], Y3, rng.uniform(0.2, 2, (2, 3)))
    demos = [(["a", "b"][rng.integers(2)], Y3[rng.integers(3)]) for _ in range(12)]
    base = m.predictive(m.state_from_demos(demos), "b")
    for _ in range(5):
        perm = [demos[i] for i in rng.permutation(12)]
        assert np.array_equal(m.predictive(m.state_from_demos(perm), "b"), base)


def test_oracle_backend_determinism_and_degenerate():
    m = DirCatModel(["x", "z"], Y3, [[1e9, 1e-9, 1e-9], [1e-9, 1e-9, 1e9]])
    b = OracleBackend(m)
    req = GenRequest(QueryContext("q", "z", demos=(("x", "y1"),)), n_samples=50, seed=4)
    first = [s.text for s in b.sample(req)]
    assert first == [s.text for s in OracleBackend(m).sample(req)]
    assert set(first) == {"y3"}
    with pytest.raises(DemoOutsideAlphabet):
        b.sample(GenRequest(QueryContext("q", "x", demos=(("w", "y1"),))))


def test_oracle_backend_consistency():
    rng = np.random.default_rng(2)
    theta = np.array([0.5, 0.35, 0.15])
    m = DirCatModel(["x"], Y3, 1.0)
    ys = rng.choice(3, size=10000, p=theta)
    demos = [("x", Y3[j]) for j in ys]
    p = OracleBackend(m).predictive_for(QueryContext("q", "x", demos=demos))
    empirical = np.bincount(ys, minlength=3) / len(ys)
    assert 0.5 * np.abs(p - empirical).sum() < 0.02


def test_sharpen():
    m = DirCatModel(["x"], ["a", "b"], [3.0, 1.0])
    p = OracleBackend(m, sharpen=3.0).predictive_for(QueryContext("q", "x"))
    assert np.allclose(p, np.array([27, 1]) / 28)


def test_reference_point_mass_is_zero():
    m = MixtureModel(["x"], Y3, [[[0.2, 0.5, 0.3]]])
    r = eu_reference(m, m.empty_state(), "x", EM)
    assert r.value == 0.0 and r.exact
    big = DirCatModel(["x"], Y3, [2e7, 5e7, 3e7])
    assert eu_reference(big, big.empty_state(), "x", EM).value < 1e-3


def test_reference_two_hypothesis():
    m = MixtureModel(["q"], ["a", "b"], [[[1.0, 0.0]], [[0.0, 1.0]]])
    r = eu_reference(m, m.empty_state(), "q", EM)
    assert r.value == pytest.approx(0.5, abs=1e-15)
    assert (r.pooled_term, r.mean_min_term) == (0.5, 0.0)
    # one observation settles it
    assert eu_reference(m, m.state_from_demos([("q", "a")]), "q", EM).value == 0.0


def test_reference_matches_simplex_quadrature():
    alpha = np.array([2.0, 3.0, 1.5])
    m = DirCatModel(["x"], Y3, alpha)
    u = UtilitySpec("callable", {"fn": lambda h, r: {("y1", "y1"): 1, ("y2", "y2"): 1, ("y3", "y3"): 1,
                                                      ("y1", "y2"): 0.5, ("y2", "y1"): 0.5}.get((h, r), 0.0)})
    ref = eu_reference(m, m.empty_state(), "x", u, n_draws=20000, seed=3)
    h = 1 / 600
    g = np.arange(h / 2, 1, h)
    t1, t2 = np.meshgrid(g, g, indexing="ij")
    t3 = 1 - t1 - t2
    ok = t3 > 0
    theta = np.stack([t1[ok], t2[ok], t3[ok]], axis=1)
    logw = ((alpha - 1) * np.log(theta)).sum(axis=1)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    risk = 1 - utility_table(Y3, Y3, u, "x")
    rho = theta @ risk.T
    quad = (w @ rho).min() - w @ rho.min(axis=1)
    assert abs(ref.value - quad) <= 2 * ref.standard_error + 1e-3


def test_reference_non_negative():
    rng = np.random.default_rng(5)
    for _ in range(20):
        m = DirCatModel(["x"], Y3, rng.uniform(0.1, 5, 3))
        assert eu_reference(m, m.empty_state(), "x", EM, n_draws=1000, seed=int(rng.integers(1e6))).value >= 0


def test_validate_convergence_aleatoric():
    m = DirCatModel(["x"], Y3, np.array([0.6, 0.3, 0.1]) * 1e7)
    rep = validate_convergence(m, QueryContext("q", "x"), EM, schedule=(1, 4), seeds=range(8), l=5, m=64,
                               n_draws=1000)
    assert all(abs(p.mean_eu) < 0.02 and abs(p.mean_gap) < 0.02 for p in rep.points)
    assert rep.passed


def test_validate_convergence_fully_epistemic():
    m = MixtureModel(["q"], ["a", "b"], [[[1.0, 0.0]], [[0.0, 1.0]]])
    rep = validate_convergence(m, QueryContext("q", "q"), EM, schedule=(1, 2), seeds=range(10), l=200, m=4)
    assert rep.points[0].mean_reference == 0.5
    assert rep.points[0].mean_eu > 0.45
    assert rep.monotone


def test_validate_convergence_mixed_decreasing():
    m = DirCatModel(["x0", "x1"], Y3, [[0.3, 0.2, 0.25], [1, 1, 1]], p_x=[0.8, 0.2])
    rep = validate_convergence(m, QueryContext("q", "x0"), EM, schedule=(1, 2, 4, 8, 16), seeds=range(10),
                               l=30, m=60)
    gaps = [p.mean_gap for p in rep.points]
    assert gaps[-1] < gaps[0]
    assert rep.monotone


def test_load_task(tmp_path):
    path = tmp_path / "task.yaml"
    path.write_text("inputs: [x]\noutputs: [a, b]\nalpha: [1, 2]\n"
                    "utility_matrix: [[1, 0.25], [0.25, 1]]\ndemos: [[x, a]]\n")
    model, util, demos = load_task(path)
    assert isinstance(model, DirCatModel) and demos == [("x", "a")]
    assert util("a", "b") == 0.25
    mix, _, _ = load_task({"inputs": ["x"], "outputs": ["a", "b"], "hypotheses": [[[1, 0]], [[0, 1]]],
                           "prior": [0.25, 0.75]})
    assert np.allclose(mix.predictive(mix.empty_state(), "x"), [0.25, 0.75])
