"""Epistemic uncertainty of an in-context learner via pseudo-demonstration chains.

For a query with demos ``z_1..z_n`` and test input ``x*`` the estimator draws
``l`` independent chains of ``extra`` pseudo-demonstrations (inputs from an
input distribution, outputs sampled autoregressively from the model itself),
then ``m`` responses to ``x*`` conditioned on each extended prompt. The last
response of every chain forms the action space; the other ``m - 1`` are used
for the plug-in estimates

    term1 = min_c  mean over all chains and samples of risk(c, y)
    term2 = mean over chains of  min_c mean over that chain's samples of risk(c, y)
    eu    = term1 - term2  (>= 0 exactly)
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .backends import GenRequest, ask
from .decision import bayes_risk, split_samples
from .errors import BackendError, ChainError, DegenerateActionSpace, InsufficientVariants
from .utility import DEFAULT_RISK, RiskTransform, TextTemplate, UtilitySpec, pairwise_matrix, utility_table

_BLANK = re.compile(r"\n\s*\n")


@dataclass(frozen=True)
class EUParams:
    l: int = 5
    m: int = 8
    extra: int = 4
    rewrites: int = 8

    def __post_init__(self):
        if self.l < 1:
            raise ValueError("need at least one chain (l >= 1)")
        if self.m < 2:
            raise ValueError("need m >= 2: m - 1 estimation samples plus one held out")
        if self.extra < 1:
            raise ValueError("need at least one pseudo-demonstration (extra >= 1)")
        if self.rewrites < 1:
            raise ValueError("rewrite count must be >= 1")


@dataclass
class PseudoChain:
    inputs: list
    outputs: list
    chain_index: int

    def __post_init__(self):
        if len(self.inputs) != len(self.outputs):
            raise ValueError("chain inputs and outputs differ in length")

    @property
    def pairs(self):
        return list(zip(self.inputs, self.outputs))


@dataclass
class EUEstimate:
    term1: float
    term2: float
    eu: float
    tu: float | None
    params: EUParams
    standard_error: float
    action_space: list
    chains: list = field(repr=False, default_factory=list)
    chain_min_risks: np.ndarray = field(repr=False, default=None)
    samples: list = field(repr=False, default_factory=list)


# ---------------------------------------------------------------------------
# input distributions
# ---------------------------------------------------------------------------

def parse_variants(text: str) -> list[str]:
    return [b.strip() for b in _BLANK.split(text.strip()) if b.strip()]


def rewrite_inputs(x_star: str, k: int, backend, template: TextTemplate | None = None,
                   seed: int | None = None) -> list[str]:
    """Ask ``backend`` for ``k`` paraphrases of ``x_star`` (blank-line separated).

    One retry is made on under-delivery; surplus variants are dropped.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if template is None:
        from .calibration import load_builtin_template
        template = load_builtin_template("rewrite")
    prompt = template.render(K=str(k), x=x_star)
    raw = ""
    for attempt in range(2):
        raw = ask(backend, prompt, seed=None if seed is None else seed + attempt, tag="rewrite")
        variants = parse_variants(raw)
        if len(variants) >= k:
            return variants[:k]
    raise InsufficientVariants(k, len(variants), raw)


class RewriteInputs:
    """p_x backed by an LM rewriter: ``K`` paraphrases per query, drawn uniformly."""

    def __init__(self, backend, k: int = 8, template: TextTemplate | None = None, seed: int = 0):
        self.backend = backend
        self.k = k
        self.template = template
        self.seed = seed
        self._variants = {}

    def variants(self, context) -> list[str]:
        key = (context.query_id, context.x_star)
        if key not in self._variants:
            self._variants[key] = rewrite_inputs(context.x_star, self.k, self.backend,
                                                 self.template, seed=self.seed)
        return self._variants[key]

    def draw(self, context, k: int, rng) -> list[str]:
        pool = self.variants(context)
        return [pool[i] for i in rng.integers(0, len(pool), size=k)]


class CategoricalInputs:
    """p_x as an explicit categorical distribution over a finite set of inputs."""

    def __init__(self, values: Sequence[str], probs: Sequence[float] | None = None):
        self.values = list(values)
        p = np.full(len(self.values), 1.0 / len(self.values)) if probs is None \
            else np.asarray(probs, dtype=np.float64)
        self.probs = p / p.sum()

    def draw(self, context, k: int, rng) -> list[str]:
        return [self.values[i] for i in rng.choice(len(self.values), size=k, p=self.probs)]


class FixedInputs:
    """p_x that always returns the test input itself."""

    def draw(self, context, k, rng):
        return [context.x_star] * k


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _seed_of(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def sample_chain(context, inputs: Sequence[str], backend, chain_index: int = 0,
                 seeds: Sequence[int | None] | None = None, temperature: float = 1.0) -> PseudoChain:
    """Sample outputs for ``inputs`` one at a time, each conditioned on all earlier pairs."""
    outputs = []
    pairs = []
    for k, x in enumerate(inputs):
        ctx = context.with_demos(pairs).with_input(x)
        seed = None if seeds is None else seeds[k]
        try:
            y = backend.sample(GenRequest(ctx, n_samples=1, temperature=temperature, seed=seed))[0].text
        except BackendError as exc:
            raise ChainError(chain_index, k, exc) from exc
        outputs.append(y)
        pairs.append((x, y))
    return PseudoChain(list(inputs), outputs, chain_index)


def estimate_tu(context, backend, n_samples: int = 16, utility: UtilitySpec = UtilitySpec(),
                transform: RiskTransform = DEFAULT_RISK, seed: int | None = 0,
                policy: str = "halves", temperature: float = 1.0):
    """Bayes risk of the base predictor from a fresh pool split into candidates / evaluation."""
    pool = backend.sample(GenRequest(context, n_samples=n_samples, temperature=temperature, seed=seed))
    cands, evals = split_samples(pool, context.query_id, policy)
    return bayes_risk(cands, pairwise_matrix(cands.candidates, evals, utility, context), transform)


def _terms(chain_means):
    term1, term2, mins = _kernels.chain_terms(chain_means)
    return float(term1), float(term2), mins


def estimate_eu(context, backend, p_x, params: EUParams = EUParams(), utility: UtilitySpec = UtilitySpec(),
                transform: RiskTransform = DEFAULT_RISK, seed: int = 0, compute_tu: bool = True,
                tu_samples: int = 16, temperature: float = 1.0) -> EUEstimate:
    """Plug-in Monte-Carlo estimate of the epistemic uncertainty for one query.

    All backend calls carry seeds derived from ``seed``, so the estimate is
    exactly replayable through a caching backend.
    """
    l, m, extra = params.l, params.m, params.extra
    root = np.random.SeedSequence(seed)
    chain_ss = root.spawn(l)
    tu_ss = root.spawn(1)[0]

    chains, finals = [], []
    for i, ss in enumerate(chain_ss):
        input_ss, step_ss, final_ss = ss.spawn(3)
        xs = p_x.draw(context, extra, np.random.default_rng(input_ss))
        chain = sample_chain(context, xs, backend, chain_index=i,
                             seeds=[_seed_of(s) for s in step_ss.spawn(extra)], temperature=temperature)
        try:
            draws = backend.sample(GenRequest(context.with_demos(chain.pairs), n_samples=m,
                                              temperature=temperature, seed=_seed_of(final_ss)))
        except BackendError as exc:
            raise ChainError(i, extra, exc) from exc
        chains.append(chain)
        finals.append([d.text for d in draws])

    held_out = [f[m - 1] for f in finals]
    if all(not h.strip() for h in held_out):
        raise DegenerateActionSpace("every held-out sample is empty")
    action_space = list(dict.fromkeys(held_out))

    # per-chain mean risk of every candidate, via counts over distinct texts
    vocab = {}
    rows = []
    for f in finals:
        row = {}
        for t in f[:m - 1]:
            j = vocab.setdefault(t, len(vocab))
            row[j] = row.get(j, 0) + 1
        rows.append(row)
    counts = np.zeros((l, len(vocab)))
    for i, row in enumerate(rows):
        for j, c in row.items():
            counts[i, j] = c
    risk = transform(utility_table(action_space, list(vocab), utility, context.x_star))
    chain_means = risk @ counts.T / (m - 1)  # (candidates, chains)

    term1, term2, mins = _terms(chain_means)
    eu = term1 - term2

    se = 0.0
    if l > 1:
        loo = np.empty(l)
        for i in range(l):
            t1, t2, _ = _terms(np.delete(chain_means, i, axis=1))
            loo[i] = t1 - t2
        se = float(np.sqrt((l - 1) / l * np.sum((loo - loo.mean()) ** 2)))

    tu = None
    if compute_tu:
        tu = estimate_tu(context, backend, tu_samples, utility, transform, seed=_seed_of(tu_ss),
                         temperature=temperature).value
    return EUEstimate(term1, term2, eu, tu, params, se, action_space, chains, mins, finals)
