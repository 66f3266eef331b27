"""Synthetic deferral tasks on the Dirichlet-categorical testbed.

Every query has its own input ``x_i`` and its own hidden ``theta_i`` drawn
from the model's prior. The base predictor sees ``n`` demonstrations mixing
draws for ``x_i`` with draws for other inputs; the expensive predictor
additionally sees ``n_prime - n`` draws from ``theta_i``, which reveal it.
"""
from __future__ import annotations

import numpy as np

from ..testbed import DirCatModel
from .runs import DeferralQuery


def deferral_testbed(n_queries: int = 100, n_outputs: int = 4, n: int = 4, n_prime: int = 128,
                     seed: int = 0):
    """Return ``(model, queries, thetas)``.

    Prior concentrations differ per input (a scale from 0.03 to 1 times a
    random base measure), so queries range from nearly decided to wide open.
    """
    rng = np.random.default_rng(seed)
    inputs = [f"x{i}" for i in range(n_queries)]
    outputs = [f"y{j}" for j in range(n_outputs)]
    scale = 10.0 ** rng.uniform(-1.5, 0.0, size=n_queries)
    base = rng.dirichlet(np.ones(n_outputs), size=n_queries)
    alpha = np.maximum(scale[:, None] * base * n_outputs, 1e-3)
    model = DirCatModel(inputs, outputs, alpha)
    thetas = np.array([rng.dirichlet(a) for a in alpha])

    def draw(i, k):
        return [(inputs[i], outputs[j]) for j in rng.choice(n_outputs, size=k, p=thetas[i])]

    queries = []
    for i in range(n_queries):
        own = int(rng.integers(0, n + 1))
        others = rng.choice([j for j in range(n_queries) if j != i], size=n - own, replace=True)
        base_demos = draw(i, own) + [d for j in others for d in draw(int(j), 1)]
        order = rng.permutation(len(base_demos))
        base_demos = [base_demos[k] for k in order]
        ref = outputs[rng.choice(n_outputs, p=thetas[i])]
        queries.append(DeferralQuery(f"q{i:04d}", inputs[i], (ref,), tuple(base_demos),
                                     tuple(base_demos) + tuple(draw(i, n_prime - n))))
    return model, queries, thetas


def calibration_testbed(n_queries: int = 2000, n_outputs: int = 4, n_samples: int = 256, sharpen: float = 1.0,
                        predictor: str = "mbr", seed: int = 0):
    """Calibration records for an oracle generator scored against its own predictive.

    References are drawn from the unsharpened predictive (the data
    distribution); predictions and predicted risks come from the oracle
    backend with ``sharpen`` applied, so ``sharpen=1`` is the matched case.
    """
    from ..backends import GenRequest, QueryContext
    from ..calibration import CalibrationRecord
    from ..decision import bayes_risk, gibbs_uncertainty, mbr_select, split_samples
    from ..testbed import OracleBackend
    from ..utility import UtilitySpec, pairwise_matrix

    rng = np.random.default_rng(seed)
    inputs = [f"x{i}" for i in range(n_queries)]
    outputs = [f"y{j}" for j in range(n_outputs)]
    model = DirCatModel(inputs, outputs, rng.uniform(0.3, 3.0, size=(n_queries, n_outputs)))
    truth = OracleBackend(model, backend_id="data")
    gen = OracleBackend(model, sharpen=sharpen, backend_id="model")
    utility = UtilitySpec("exact-match")
    seeds = rng.integers(0, 2 ** 31, size=(n_queries, 2))
    records = []
    for i, x in enumerate(inputs):
        ctx = QueryContext(f"q{i:05d}", x)
        pool = gen.sample(GenRequest(ctx, n_samples=n_samples, seed=int(seeds[i, 0])))
        ref = truth.sample(GenRequest(ctx, n_samples=1, seed=int(seeds[i, 1])))[0].text
        if predictor == "gibbs":
            answer, peers = pool[0], pool[1:]
            risk = gibbs_uncertainty(answer, pairwise_matrix([answer], peers, utility).values[0]).value
            answer = answer.text
        else:
            cands, evals = split_samples(pool, ctx.query_id)
            matrix = pairwise_matrix(cands.candidates, evals, utility)
            answer = mbr_select(cands, matrix)[0]
            risk = bayes_risk(cands, matrix).value
        u = utility(answer, ref)
        records.append(CalibrationRecord(ctx.query_id, risk, 1.0 - u, u, f"sharpen={sharpen:g}"))
    return records
