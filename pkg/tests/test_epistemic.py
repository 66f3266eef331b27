import hashlib
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from decisionuq import _kernels
from decisionuq.backends import (FunctionBackend, GenRequest, QueryContext, ScriptedBackend, render_prompt)
from decisionuq.decision import bayes_risk, split_samples
from decisionuq.epistemic import (CategoricalInputs, EUParams, FixedInputs, RewriteInputs, estimate_eu,
                                  estimate_tu, rewrite_inputs, sample_chain)
from decisionuq.errors import ChainError, DegenerateActionSpace, InsufficientVariants, BackendError
from decisionuq.testbed import DirCatModel, MixtureModel, ModelInputs, OracleBackend, eu_reference
from decisionuq.utility import UtilitySpec, pairwise_matrix

EM = UtilitySpec("exact-match")


def _hash_backend():
    return FunctionBackend(lambda p, r, i: "y" + hashlib.sha256(f"{p}|{r.seed}|{i}".encode()).hexdigest()[:1])


def two_hypothesis():
    return MixtureModel(["q"], ["a", "b"], [[[1.0, 0.0]], [[0.0, 1.0]]])


def test_params_validation():
    EUParams(1, 2, 1)
    for bad in ({"l": 0}, {"m": 1}, {"extra": 0}, {"rewrites": 0}):
        with pytest.raises(ValueError):
            EUParams(**bad)


def test_rewrite_examples():
    assert rewrite_inputs("x", 3, ScriptedBackend(["one\n\ntwo\n \nthree"])) == ["one", "two", "three"]
    assert rewrite_inputs("x", 2, ScriptedBackend(["a\n\nb\n\nc"])) == ["a", "b"]
    short = ScriptedBackend(["only one", "still\n\ntwo"])
    with pytest.raises(InsufficientVariants):
        rewrite_inputs("x", 3, short)
    assert short.calls == 2
    retry = ScriptedBackend(["a", "a\n\nb"])
    assert rewrite_inputs("x", 2, retry) == ["a", "b"]
    b = ScriptedBackend(["p\n\nq"])
    rewrite_inputs("Original sentence.", 2, b)
    assert "Original sentence." in b.prompts[0] and "2" in b.prompts[0]


def test_rewrite_provider_draws_from_variants():
    p = RewriteInputs(ScriptedBackend(["u\n\nv\n\nw"]), k=3)
    draws = p.draw(QueryContext("q", "x"), 50, np.random.default_rng(0))
    assert set(draws) <= {"u", "v", "w"} and len(set(draws)) == 3


def test_categorical_inputs_frequencies():
    probs = np.array([0.5, 0.3, 0.15, 0.05])
    draws = CategoricalInputs(["a", "b", "c", "d"], probs).draw(None, 10000, np.random.default_rng(1))
    for v, p in zip("abcd", probs):
        freq = draws.count(v)
        assert abs(freq - 10000 * p) <= 3 * np.sqrt(10000 * p * (1 - p))


def test_sample_chain_base_case_and_prompts():
    ctx = QueryContext("q", "X*", demos=(("d1", "e1"),))
    b = FunctionBackend(lambda p, r, i: f"out{len(p)}")
    c = sample_chain(ctx, ["u"], b)
    assert b.prompts == ["d1\ne1\nu"]
    assert c.outputs == ["out" + str(len("d1\ne1\nu"))]
    b2 = FunctionBackend(lambda p, r, i: f"out{len(p)}")
    c = sample_chain(ctx, ["u", "v", "w"], b2)
    expected, pairs = [], []
    for x in ["u", "v", "w"]:
        prompt = render_prompt(ctx.with_demos(pairs).with_input(x))
        expected.append(prompt)
        pairs.append((x, f"out{len(prompt)}"))
    assert b2.prompts == expected
    assert c.pairs == pairs


def test_chain_errors_carry_position():
    calls = []

    def fn(p, r, i):
        calls.append(p)
        if len(calls) == 2:
            raise BackendError("boom")
        return "y"
    with pytest.raises(ChainError) as info:
        sample_chain(QueryContext("q", "x"), ["a", "b", "c"], FunctionBackend(fn), chain_index=3)
    assert (info.value.chain, info.value.step) == (3, 1)


def test_chain_counts_follow_conjugate_update():
    model = DirCatModel(["x0", "x1"], ["a", "b", "c"], [[1, 2, 3], [0.5, 0.5, 0.5]])
    demos = [("x0", "a"), ("x1", "c")]
    backend = OracleBackend(model, seed=0)
    ctx = QueryContext("q", "x0", demos=demos)
    chain = sample_chain(ctx, ["x0", "x1", "x1", "x0", "x0"], backend, seeds=list(range(5)))
    state = model.state_from_demos(ctx.with_demos(chain.pairs).demos)
    expected = np.zeros((2, 3), dtype=int)
    for x, y in demos + chain.pairs:
        expected[int(x[1]), "abc".index(y)] += 1
    assert np.array_equal(state.counts, expected)
    w = model.alpha[0] + expected[0]
    assert np.allclose(backend.predictive_for(ctx.with_demos(chain.pairs)), w / w.sum(), atol=0)


def test_deterministic_backend_gives_zero():
    est = estimate_eu(QueryContext("q", "x"), ScriptedBackend(["same"]), FixedInputs(), EUParams(5, 8, 4))
    assert est.term1 == est.term2 == est.eu == 0.0
    assert est.tu == 0.0
    assert est.action_space == ["same"]


def test_degenerate_action_space():
    with pytest.raises(DegenerateActionSpace):
        estimate_eu(QueryContext("q", "x"), ScriptedBackend([""]), FixedInputs(), EUParams(2, 3, 1))


def test_estimate_eu_structure_and_replay():
    ctx = QueryContext("q", "x")
    est = estimate_eu(ctx, _hash_backend(), FixedInputs(), EUParams(4, 6, 2), seed=3)
    assert len(est.chains) == 4 and all(len(c.inputs) == 2 for c in est.chains)
    assert len(est.samples) == 4 and all(len(s) == 6 for s in est.samples)
    assert est.action_space == list(dict.fromkeys(s[-1] for s in est.samples))
    assert 0 <= est.eu <= est.term1 <= 1
    again = estimate_eu(ctx, _hash_backend(), FixedInputs(), EUParams(4, 6, 2), seed=3)
    assert (again.eu, again.tu, again.samples) == (est.eu, est.tu, est.samples)


def _terms_direct(samples, utility):
    """term1 / term2 recomputed from the raw draws without the count trick."""
    held = [s[-1] for s in samples]
    est = [s[:-1] for s in samples]
    pooled = [y for s in est for y in s]
    cands = list(dict.fromkeys(held))
    t1 = min(np.mean([1 - utility(c, y) for y in pooled]) for c in cands)
    t2 = np.mean([min(np.mean([1 - utility(c, y) for y in s]) for c in cands) for s in est])
    return t1, t2


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(2, 7), st.integers(1, 3), st.integers(0, 10 ** 6))
def test_terms_match_direct_recomputation(l, m, extra, seed):
    est = estimate_eu(QueryContext("q", "x"), _hash_backend(), FixedInputs(), EUParams(l, m, extra),
                      utility=UtilitySpec("chrf"), seed=seed, compute_tu=False)
    t1, t2 = _terms_direct(est.samples, UtilitySpec("chrf"))
    assert est.term1 == pytest.approx(t1, abs=1e-12)
    assert est.term2 == pytest.approx(t2, abs=1e-12)
    assert est.eu >= 0.0


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6), st.integers(1, 8), st.integers(0, 10 ** 6))
def test_chain_terms_non_negative_exactly(c, l, seed):
    rng = np.random.default_rng(seed)
    means = rng.random((c, l)) * rng.choice([1e-9, 1.0, 1e6])
    t1, t2, mins = _kernels.chain_terms(means)
    assert t1 - t2 >= 0.0
    perm = rng.permutation(l)
    p1, p2, _ = _kernels.chain_terms(means[:, perm])
    assert p1 - p2 == t1 - t2 or abs((p1 - p2) - (t1 - t2)) < 1e-15 * max(1.0, abs(t1))


def test_chain_order_invariance_on_estimator():
    est = estimate_eu(QueryContext("q", "x"), _hash_backend(), FixedInputs(), EUParams(5, 8, 2), seed=11,
                      compute_tu=False)
    vocab = sorted({t for s in est.samples for t in s})
    counts = np.array([[s[:-1].count(v) for v in vocab] for s in est.samples], dtype=float)
    risk = 1 - pairwise_matrix(est.action_space, vocab, EM).values
    base = _kernels.chain_terms(risk @ counts.T / 7)
    for perm in itertools.permutations(range(5)):
        t1, t2, _ = _kernels.chain_terms((risk @ counts.T / 7)[:, list(perm)])
        assert t1 - t2 == pytest.approx(base[0] - base[1], abs=1e-15)


def test_estimate_tu_examples():
    ctx = QueryContext("q", "x")
    assert estimate_tu(ctx, ScriptedBackend(["same"])).value == 0.0
    b = _hash_backend()
    tu = estimate_tu(ctx, b, 16, seed=5)
    pool = b.sample(GenRequest(ctx, n_samples=16, seed=5))
    cands, evals = split_samples(pool)
    assert len(cands) == 8
    assert tu.value == bayes_risk(cands, pairwise_matrix(cands.candidates, evals, EM)).value


def test_estimate_tu_against_exact_bayes_risk():
    model = DirCatModel(["x"], ["a", "b", "c"], 1.0)
    demos = [("x", "a")] * 5 + [("x", "b")] * 2
    backend = OracleBackend(model, demos)
    p = backend.predictive_for(QueryContext("q", "x"))
    exact = 1 - p.max()
    vals = np.array([estimate_tu(QueryContext("q", "x"), backend, 400, seed=s).value for s in range(40)])
    assert abs(vals.mean() - exact) <= 2 * vals.std(ddof=1) / np.sqrt(len(vals))


def test_two_hypothesis_extreme():
    # one pseudo-demonstration for x* reveals theta, so every chain is deterministic
    model = two_hypothesis()
    backend = OracleBackend(model)
    ctx = QueryContext("q", "q")
    eus, tus = [], []
    for s in range(400):
        est = estimate_eu(ctx, backend, FixedInputs(), EUParams(5, 8, 1), seed=s, tu_samples=10)
        assert est.term2 == 0.0
        eus.append(est.eu)
        tus.append(est.tu)
    # E[eu] = E[min(K, 5 - K)] / 5 with K ~ Bin(5, 1/2) = 0.3125
    assert np.mean(eus) == pytest.approx(0.3125, abs=3 * np.std(eus) / 20)
    assert abs(np.mean(eus) - np.mean(tus)) < 0.05


def test_two_hypothesis_large_sample_limit():
    model = two_hypothesis()
    est = estimate_eu(QueryContext("q", "q"), OracleBackend(model), FixedInputs(), EUParams(2000, 8, 1),
                      seed=0, tu_samples=4000)
    assert abs(est.eu - 0.5) <= 2 * est.standard_error + 1e-12
    assert abs(est.eu - est.tu) < 0.05


def test_lower_bound_on_dirichlet_task():
    model = DirCatModel(["x0", "x1"], ["a", "b", "c"], [[0.4, 0.3, 0.3], [1.0, 1.0, 1.0]], p_x=[0.7, 0.3])
    ctx = QueryContext("q", "x0", demos=(("x0", "a"),))
    backend = OracleBackend(model)
    state = model.state_from_demos(ctx.demos)
    for s in range(5):
        est = estimate_eu(ctx, backend, ModelInputs(model), EUParams(30, 60, 4), seed=s, compute_tu=False)
        ref = eu_reference(model, state, "x0", EM, candidates=est.action_space, seed=s)
        assert est.eu <= ref.value + 2 * np.hypot(est.standard_error, ref.standard_error)


def test_eu_grows_with_pseudo_demos():
    model = DirCatModel(["x"], ["a", "b", "c"], 0.5)
    backend = OracleBackend(model)
    ctx = QueryContext("q", "x")
    means = {}
    for extra in (1, 8):
        means[extra] = np.mean([estimate_eu(ctx, backend, FixedInputs(), EUParams(5, 8, extra), seed=s,
                                            compute_tu=False).eu for s in range(40)])
    assert means[8] >= means[1]
