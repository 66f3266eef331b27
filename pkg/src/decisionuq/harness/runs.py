"""Experiment orchestration: QA calibration runs and deferral runs.

Every generator call carries a seed derived from the run seed and the query
id, so a run replays exactly from its cache. Per-query work fans out over a
thread pool; aggregation and report writing happen after the join.
"""
from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .. import __version__
from ..backends import GenRequest, QueryContext
from ..calibration import (BinSpec, CalibrationRecord, aurac_records, bootstrap_ci, ece,
                           prompt_confidence, reliability_diagram)
from ..decision import bayes_risk, gibbs_uncertainty, mbr_select, split_samples
from ..epistemic import CategoricalInputs, EUParams, FixedInputs, RewriteInputs, estimate_eu
from ..errors import ConfigError, DecisionUQError, RunFailed
from ..reports import svg_plot, write_csv, write_json, write_svg
from ..utility import DEFAULT_RISK, RiskTransform, UtilitySpec, pairwise_matrix
from .config import Runtime, config_digest, load_config, resolve_path, section
from .datasets import DatasetRecord, load_dataset, subsample
from .deferral import auc_df, bootstrap_compare, deferral_curve, permutation_test

CONFIDENCE_METHODS = ("prob", "p_true", "verb_2s")
DEFERRAL_METHODS = ("eu", "tu", "random")


def query_seed(seed: int, query_id: str, salt: str = "") -> int:
    h = hashlib.sha256(f"{seed}\x1f{query_id}\x1f{salt}".encode("utf-8")).digest()
    return int.from_bytes(h[:4], "little")


def map_queries(fn: Callable, items: Sequence, workers: int = 1):
    """Apply ``fn`` to every item; returns (results, failures) in input order.

    A DecisionUQError on one item is recorded as a failure and the item's
    result is None; any other exception propagates.
    """
    def guarded(item):
        try:
            return fn(item), None
        except DecisionUQError as exc:
            return None, f"{type(exc).__name__}: {exc}"

    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(guarded, items))
    else:
        out = [guarded(it) for it in items]
    return [r for r, _ in out], [(i, e) for i, (_, e) in enumerate(out) if e is not None]


def _check_failures(failures, total, limit, stage):
    if total and len(failures) / total > limit:
        raise RunFailed(f"{stage}: {len(failures)} of {total} queries failed "
                        f"(limit {limit:.0%}); first: {failures[0][2]}", failures)


def _manifest(command, cfg, seed, digests, extra):
    return {"command": command, "config_digest": config_digest(cfg), "seed": seed,
            "cache_digests": sorted(set(digests)), "package_version": __version__, **extra}


def _load_records(cfg, seed):
    ds = section(cfg, "dataset")
    if "path" not in ds:
        raise ConfigError("dataset.path is required")
    records = load_dataset(resolve_path(cfg, ds["path"]), ds.get("format", "qa-jsonl"))
    return subsample(records, ds.get("subsample"), seed=ds.get("subsample_seed", seed))


def realized_utility(answer: str, references: Sequence[str], utility: UtilitySpec, question: str) -> float:
    """Best utility of the answer against any of the references."""
    return max(utility(answer, r, question) for r in references)


# ---------------------------------------------------------------------------
# QA calibration
# ---------------------------------------------------------------------------

@dataclass
class QAOutcome:
    query_id: str
    answer: str
    realized_utility: float
    predicted: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    digests: list = field(default_factory=list)


def run_qa_calibration(config, out_dir=None, seed: int | None = None, cache=None,
                       offline: bool | None = None, workers: int | None = None,
                       runtime: Runtime | None = None) -> dict:
    """Calibration study: per method records, ECE with CI, reliability diagram, AURAC."""
    cfg = load_config(config)
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    rt = runtime or Runtime(cfg, cache, offline)
    cal = section(cfg, "calibration")
    methods = list(cal.get("methods", ["prob"]))
    bad = [m for m in methods if m not in CONFIDENCE_METHODS]
    if bad:
        raise ConfigError(f"unknown calibration methods {bad}; expected {CONFIDENCE_METHODS}")
    n_samples = int(cal.get("n_samples", 10))
    predictor = cal.get("predictor", "gibbs")
    if predictor not in ("gibbs", "mbr"):
        raise ConfigError("calibration.predictor must be 'gibbs' or 'mbr'")
    bins = BinSpec(cal.get("binning", "equal-mass"), int(cal.get("n_bins", 10)))
    temperature = float(cal.get("temperature", 1.0))
    instruction = cfg.get("instruction")
    gen = rt.backend(cal.get("generator", "gen"))
    conf_backend = rt.backend(cal["confidence_backend"]) if "confidence_backend" in cal else gen
    utility = rt.utility()
    transform = rt.transform()
    records = _load_records(cfg, seed)
    out = Path(out_dir or resolve_path(cfg, cfg.get("output", "runs/calibrate")))

    def one(rec: DatasetRecord) -> QAOutcome:
        qs = query_seed(seed, rec.id, "generate")
        ctx = QueryContext(rec.id, rec.input, instruction=instruction, task="qa")
        pool = gen.sample(GenRequest(ctx, n_samples=n_samples, temperature=temperature, seed=qs))
        if predictor == "gibbs":
            answer, peers = pool[0], pool[1:]
            prob = gibbs_uncertainty(answer, pairwise_matrix([answer], peers, utility, ctx),
                                     transform, eval_samples=peers).value
        else:
            cands, evals = split_samples(pool, rec.id)
            matrix = pairwise_matrix(cands.candidates, evals, utility, ctx)
            text, _ = mbr_select(cands, matrix)
            answer = cands.candidates[cands.texts.index(text)]
            peers = [s for s in pool if s is not answer]
            prob = bayes_risk(cands, matrix, transform).value
        outcome = QAOutcome(rec.id, answer.text,
                            realized_utility(answer.text, rec.references, utility, rec.input),
                            digests=[pool[0].request_digest])
        for method in methods:
            try:
                if method == "prob":
                    outcome.predicted[method] = prob
                else:
                    conf = prompt_confidence(method, ctx, answer.text, [p.text for p in peers],
                                             conf_backend, seed=query_seed(seed, rec.id, method))
                    outcome.predicted[method] = float(transform(conf))
            except DecisionUQError as exc:
                outcome.failures.append((rec.id, method, f"{type(exc).__name__}: {exc}"))
        return outcome

    results, failed = map_queries(one, records, workers or int(cfg.get("max_concurrency", 1)))
    failures = [(records[i].id, "generate", msg) for i, msg in failed]
    for r in results:
        if r is not None:
            failures.extend(r.failures)
    limit = float(cal.get("max_failure_fraction", 0.1))
    _check_failures([f for f in failures if f[1] == "generate"], len(records), limit, "generation")

    summary_rows, per_method = [], {}
    sims = int(cal.get("bootstrap_sims", 1000))
    for method in methods:
        recs = [CalibrationRecord(r.query_id, r.predicted[method], float(transform(r.realized_utility)),
                                  r.realized_utility, method)
                for r in results if r is not None and method in r.predicted]
        _check_failures([f for f in failures if f[1] in (method, "generate")], len(records), limit, method)
        if not recs:
            raise RunFailed(f"{method}: no usable records", failures)
        e, e_lo, e_hi = bootstrap_ci(lambda rs: ece(rs, bins), recs, n_sims=sims, seed=seed)
        a, a_lo, a_hi = bootstrap_ci(aurac_records, recs, n_sims=sims, seed=seed)
        diagram = reliability_diagram(recs, bins)
        mean_u = float(np.mean([r.realized_utility for r in recs]))
        summary_rows.append([method, len(recs), e, e_lo, e_hi, a, a_lo, a_hi, mean_u,
                             len(diagram.overconfident_bins())])
        per_method[method] = {"ece": e, "aurac": a, "mean_utility": mean_u, "n": len(recs)}
        write_csv(out / f"records_{method}.csv",
                  ["query_id", "predicted_risk", "realized_risk", "realized_utility"],
                  [[r.query_id, r.predicted_risk, r.realized_risk, r.realized_utility] for r in recs])
        (out / f"reliability_{method}.csv").write_text(diagram.to_csv(), encoding="utf-8")
        write_svg(out / f"reliability_{method}.svg", diagram.to_svg(f"Reliability ({method})"))

    write_csv(out / "summary.csv", ["method", "n", "ece", "ece_lo", "ece_hi", "aurac", "aurac_lo",
                                    "aurac_hi", "mean_utility", "overconfident_bins"], summary_rows)
    write_csv(out / "answers.csv", ["query_id", "answer", "realized_utility"],
              [[r.query_id, r.answer, r.realized_utility] for r in results if r is not None])
    write_csv(out / "failures.csv", ["query_id", "stage", "error"], failures)
    digests = [d for r in results if r is not None for d in r.digests]
    write_json(out / "manifest.json", _manifest("calibrate", cfg, seed, digests,
                                                {"n_queries": len(records), "methods": methods,
                                                 "predictor": predictor, "n_samples": n_samples}))
    return {"out_dir": str(out), "methods": per_method, "failures": failures}


# ---------------------------------------------------------------------------
# deferral
# ---------------------------------------------------------------------------

class UniformRetriever:
    """Extra demonstrations drawn uniformly without replacement."""

    def retrieve(self, query: DatasetRecord, pool: Sequence[DatasetRecord], k: int, exclude: set, rng):
        ids = [i for i, p in enumerate(pool) if i not in exclude]
        if k > len(ids):
            raise ConfigError(f"demo pool too small: need {k} more demonstrations, have {len(ids)}")
        return [ids[j] for j in rng.choice(len(ids), size=k, replace=False)]


class LexicalRetriever:
    """Nearest neighbours by token overlap (F1) of the inputs; ties in pool order."""

    def retrieve(self, query, pool, k, exclude, rng):
        from ..utility import token_f1
        scored = [(-token_f1(p.input, query.input), i) for i, p in enumerate(pool) if i not in exclude]
        if k > len(scored):
            raise ConfigError(f"demo pool too small: need {k} more demonstrations, have {len(scored)}")
        return [i for _, i in sorted(scored)[:k]]


RETRIEVERS = {"uniform": UniformRetriever, "lexical": LexicalRetriever}


@dataclass
class DeferralQuery:
    id: str
    input: str
    references: tuple
    base_demos: tuple
    exp_demos: tuple


def build_deferral_queries(records, pool, n: int = 4, n_prime: int = 128, retriever=None,
                           seed: int = 0) -> list[DeferralQuery]:
    """Base demos: ``n`` uniform from the pool. Expensive: those plus ``n_prime - n`` retrieved."""
    if n_prime < n:
        raise ConfigError("expensive predictor must see at least as many demonstrations as the base")
    retriever = retriever or UniformRetriever()
    out = []
    for rec in records:
        rng = np.random.default_rng(query_seed(seed, rec.id, "demos"))
        own = {i for i, p in enumerate(pool) if p.id == rec.id and p.input == rec.input}
        ids = [i for i in range(len(pool)) if i not in own]
        if n > len(ids):
            raise ConfigError(f"demo pool too small for n={n}")
        base = [ids[j] for j in rng.choice(len(ids), size=n, replace=False)]
        more = retriever.retrieve(rec, pool, n_prime - n, own | set(base), rng)
        pair = lambda i: (pool[i].input, pool[i].references[0])
        out.append(DeferralQuery(rec.id, rec.input, rec.references, tuple(pair(i) for i in base),
                                 tuple(pair(i) for i in base + list(more))))
    return out


@dataclass
class DeferralTable:
    ids: list
    scores: dict
    base_utils: np.ndarray
    exp_utils: np.ndarray
    base_answers: list
    exp_answers: list
    digests: list = field(default_factory=list)
    failures: list = field(default_factory=list)


def evaluate_deferral(queries: Sequence[DeferralQuery], backend, p_x, utility: UtilitySpec,
                      transform: RiskTransform = DEFAULT_RISK, params: EUParams = EUParams(),
                      methods: Sequence[str] = DEFERRAL_METHODS, seed: int = 0, mbr_samples: int = 16,
                      workers: int = 1, instruction: str | None = None, temperature: float = 1.0,
                      expensive_backend=None, max_failure_fraction: float = 0.1) -> DeferralTable:
    """Score every query with both predictors and every deferral method.

    Both predictors are MBR over ``mbr_samples`` draws split in halves; the
    TU score is the base predictor's own Bayes risk.
    """
    bad = [m for m in methods if m not in DEFERRAL_METHODS]
    if bad:
        raise ConfigError(f"unknown deferral methods {bad}; expected {DEFERRAL_METHODS}")
    expensive_backend = expensive_backend or backend

    def mbr(ctx, be, s):
        pool = be.sample(GenRequest(ctx, n_samples=mbr_samples, temperature=temperature, seed=s))
        cands, evals = split_samples(pool, ctx.query_id)
        matrix = pairwise_matrix(cands.candidates, evals, utility, ctx)
        text, _ = mbr_select(cands, matrix)
        return text, bayes_risk(cands, matrix, transform).value, pool[0].request_digest

    def one(q: DeferralQuery):
        base_ctx = QueryContext(q.id, q.input, q.base_demos, instruction=instruction, task="defer")
        exp_ctx = QueryContext(q.id, q.input, q.exp_demos, instruction=instruction, task="defer")
        b_text, tu, d1 = mbr(base_ctx, backend, query_seed(seed, q.id, "base"))
        e_text, _, d2 = mbr(exp_ctx, expensive_backend, query_seed(seed, q.id, "expensive"))
        row = {"tu": tu, "base_answer": b_text, "exp_answer": e_text, "digests": [d1, d2],
               "base_utility": realized_utility(b_text, q.references, utility, q.input),
               "exp_utility": realized_utility(e_text, q.references, utility, q.input)}
        if "eu" in methods:
            est = estimate_eu(base_ctx, backend, p_x, params, utility, transform,
                              seed=query_seed(seed, q.id, "eu"), compute_tu=False,
                              temperature=temperature)
            row["eu"] = est.eu
        return row

    rows, failed = map_queries(one, list(queries), workers)
    failures = [(queries[i].id, "score", msg) for i, msg in failed]
    _check_failures(failures, len(queries), max_failure_fraction, "deferral scoring")
    keep = [i for i, r in enumerate(rows) if r is not None]
    rows = [rows[i] for i in keep]
    ids = [queries[i].id for i in keep]
    scores = {}
    for m in methods:
        if m == "random":
            scores[m] = np.random.default_rng(query_seed(seed, "", "random")).random(len(keep))
        else:
            scores[m] = np.array([r[m] for r in rows], dtype=np.float64)
    return DeferralTable(ids, scores, np.array([r["base_utility"] for r in rows]),
                         np.array([r["exp_utility"] for r in rows]),
                         [r["base_answer"] for r in rows], [r["exp_answer"] for r in rows],
                         [d for r in rows for d in r["digests"]], failures)


def _p_x(rt: Runtime, cfg, spec: dict, pool):
    kind = spec.get("kind", "rewrite")
    if kind == "rewrite":
        return RewriteInputs(rt.backend(spec.get("backend", "gen")), int(spec.get("k", 8)),
                             rt.template(spec.get("template", "rewrite")), seed=int(spec.get("seed", 0)))
    if kind == "fixed":
        return FixedInputs()
    if kind == "pool":
        return CategoricalInputs([p.input for p in pool])
    raise ConfigError(f"unknown p_x kind {kind!r}; expected rewrite, fixed or pool")


def run_deferral(config, out_dir=None, seed: int | None = None, cache=None,
                 offline: bool | None = None, workers: int | None = None,
                 runtime: Runtime | None = None) -> dict:
    """Deferral study: curves, AUC-DF per method, permutation p, eu-vs-tu bootstrap."""
    cfg = load_config(config)
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    rt = runtime or Runtime(cfg, cache, offline)
    d = section(cfg, "deferral")
    records = _load_records(cfg, seed)
    pool_spec = d.get("pool")
    pool = records if pool_spec is None else load_dataset(resolve_path(cfg, pool_spec["path"]),
                                                          pool_spec.get("format", "parallel-tsv"))
    retriever_name = d.get("retriever", "uniform")
    if retriever_name not in RETRIEVERS:
        raise ConfigError(f"unknown retriever {retriever_name!r}; expected {sorted(RETRIEVERS)}")
    queries = build_deferral_queries(records, pool, int(d.get("n", 4)), int(d.get("n_prime", 128)),
                                     RETRIEVERS[retriever_name](), seed)
    eu = section(d, "eu")
    params = EUParams(int(eu.get("l", 5)), int(eu.get("m", 8)), int(eu.get("extra", 4)),
                      int(section(d, "p_x").get("k", 8)))
    methods = list(d.get("methods", DEFERRAL_METHODS))
    gen = rt.backend(d.get("generator", "gen"))
    table = evaluate_deferral(queries, gen, _p_x(rt, cfg, section(d, "p_x"), pool), rt.utility(),
                              rt.transform(), params, methods, seed, int(d.get("mbr_samples", 16)),
                              workers or int(cfg.get("max_concurrency", 1)), cfg.get("instruction"),
                              float(d.get("temperature", 1.0)),
                              rt.backend(d["expensive"]) if "expensive" in d else None,
                              float(d.get("max_failure_fraction", 0.1)))
    out = Path(out_dir or resolve_path(cfg, cfg.get("output", "runs/defer")))
    return write_deferral_reports(table, out, d, cfg, seed)


def write_deferral_reports(table: DeferralTable, out: Path, d: dict, cfg: dict, seed: int) -> dict:
    reps = int(d.get("permutation_reps", 10000))
    sims = int(d.get("bootstrap_sims", 1000))
    fraction = float(d.get("bootstrap_fraction", 0.5))
    methods = list(table.scores)
    curves = {m: deferral_curve(table.scores[m], table.base_utils, table.exp_utils, table.ids)
              for m in methods}
    aucs = {m: auc_df(c) for m, c in curves.items()}
    comparison = {"auc_df": aucs}
    if "eu" in methods and "random" in methods:
        comparison["p_value_eu_vs_random"] = permutation_test(
            table.scores["eu"], table.base_utils, table.exp_utils, reps=reps, seed=seed, ids=table.ids)
    if "eu" in methods and "tu" in methods:
        summary, _ = bootstrap_compare(table.scores["eu"], table.scores["tu"], table.base_utils,
                                       table.exp_utils, sims=sims, fraction=fraction, seed=seed,
                                       ids=table.ids)
        comparison["eu_minus_tu"] = {"median": summary.median, "q25": summary.q25, "q75": summary.q75,
                                     "formatted": summary.format()}

    m_total = len(table.ids)
    write_csv(out / "scores.csv", ["query_id", *methods, "base_utility", "exp_utility"],
              [[qid, *[table.scores[m][i] for m in methods], table.base_utils[i], table.exp_utils[i]]
               for i, qid in enumerate(table.ids)])
    write_csv(out / "curves.csv", ["m", *methods],
              [[k, *[curves[m].values[k] for m in methods]] for k in range(m_total + 1)])
    write_csv(out / "summary.csv", ["method", "auc_df"], [[m, aucs[m]] for m in methods])
    write_csv(out / "failures.csv", ["query_id", "stage", "error"], table.failures)
    frac = [k / max(m_total, 1) for k in range(m_total + 1)]
    write_svg(out / "deferral.svg", svg_plot({m: (frac, list(curves[m].values)) for m in methods},
                                             "Deferral curves", "fraction deferred", "mean utility",
                                             xlim=(0, 1)))
    write_json(out / "comparison.json", comparison)
    write_json(out / "manifest.json", _manifest("defer", cfg, seed, table.digests,
                                                {"n_queries": m_total, "methods": methods,
                                                 "permutation_reps": reps, "bootstrap_sims": sims,
                                                 "bootstrap_fraction": fraction}))
    return {"out_dir": str(out), **comparison}
