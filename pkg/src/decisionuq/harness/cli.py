"""Command-line entry point: ``decisionuq <command> [options]``."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from ..backends import GenRequest, QueryContext, set_max_concurrency
from ..errors import DecisionUQError
from .config import Runtime, load_config, resolve_path, section


def _global(p):
    p.add_argument("--config", help="run description (YAML or JSON)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--cache", help="JSON-lines sample cache")
    p.add_argument("--offline", action="store_true", help="replay from the cache only")
    p.add_argument("--max-concurrency", type=int, default=None,
                   help="upper bound on in-flight remote requests and query workers")


def _runtime(args):
    cfg = load_config(args.config) if args.config else load_config({})
    return cfg, Runtime(cfg, args.cache, True if args.offline else None)


def _seed(args, cfg):
    return int(args.seed if args.seed is not None else cfg.get("seed", 0))


def _print(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False, default=float))


def cmd_sample(args):
    cfg, rt = _runtime(args)
    ctx = QueryContext(args.query_id, args.input, instruction=cfg.get("instruction"))
    draws = rt.backend(args.backend).sample(GenRequest(ctx, n_samples=args.n, temperature=args.temperature,
                                                       seed=_seed(args, cfg)))
    for d in draws:
        print(json.dumps({"draw_index": d.draw_index, "text": d.text, "digest": d.request_digest},
                         ensure_ascii=False))


def cmd_score(args):
    cfg, rt = _runtime(args)
    spec = {"kind": args.utility} if args.utility else None
    print(f"{rt.utility(spec)(args.hypothesis, args.reference, args.question):.6g}")


def cmd_uq(args):
    from ..decision import bayes_risk, mbr_select, split_samples
    from ..utility import pairwise_matrix
    cfg, rt = _runtime(args)
    ctx = QueryContext(args.query_id, args.input, instruction=cfg.get("instruction"))
    pool = rt.backend(args.backend).sample(GenRequest(ctx, n_samples=args.n, seed=_seed(args, cfg)))
    cands, evals = split_samples(pool, ctx.query_id)
    utility = rt.utility()
    matrix = pairwise_matrix(cands.candidates, evals, utility, ctx)
    choice, expected = mbr_select(cands, matrix)
    risk = bayes_risk(cands, matrix, rt.transform())
    _print({"prediction": choice, "expected_utility": expected, "bayes_risk": risk.value,
            "standard_error": risk.standard_error, "n_eval_samples": risk.n_eval_samples})


def cmd_eu(args):
    from ..epistemic import EUParams, FixedInputs, RewriteInputs, estimate_eu
    cfg, rt = _runtime(args)
    ctx = QueryContext(args.query_id, args.input, instruction=cfg.get("instruction"))
    gen = rt.backend(args.backend)
    p_x = FixedInputs() if args.p_x == "fixed" else RewriteInputs(gen, args.rewrites,
                                                                  rt.template("rewrite"))
    est = estimate_eu(ctx, gen, p_x, EUParams(args.l, args.m, args.extra, args.rewrites), rt.utility(),
                      rt.transform(), seed=_seed(args, cfg))
    _print({"eu": est.eu, "tu": est.tu, "term1": est.term1, "term2": est.term2,
            "standard_error": est.standard_error, "action_space": est.action_space})


def cmd_calibrate(args):
    from .runs import run_qa_calibration
    cfg, _ = _runtime(args)
    res = run_qa_calibration(cfg, args.out, seed=args.seed, cache=args.cache,
                             offline=True if args.offline else None, workers=args.max_concurrency)
    _print({"out_dir": res["out_dir"], "methods": res["methods"], "failures": len(res["failures"])})


def cmd_defer(args):
    from .runs import run_deferral
    cfg, _ = _runtime(args)
    _print(run_deferral(cfg, args.out, seed=args.seed, cache=args.cache,
                        offline=True if args.offline else None, workers=args.max_concurrency))


def cmd_oracle_validate(args):
    from ..reports import write_csv
    from ..testbed import load_task, validate_convergence
    cfg, rt = _runtime(args)
    task = args.task or section(cfg, "oracle").get("task")
    if task is None:
        raise DecisionUQError("oracle-validate needs --task or oracle.task in the config")
    model, utility, demos = load_task(resolve_path(cfg, task))
    ctx = QueryContext("oracle-validate", args.input or model.inputs[0])
    report = validate_convergence(model, ctx, utility, schedule=tuple(args.schedule),
                                  seeds=range(_seed(args, cfg), _seed(args, cfg) + args.seeds),
                                  l=args.l, m=args.m, initial_demos=demos, transform=rt.transform())
    if args.out:
        write_csv(Path(args.out) / "convergence.csv",
                  ["extra", "mean_eu", "mean_reference", "mean_gap", "gap_se", "combined_se"], report.rows())
    _print({"passed": report.passed, "monotone": report.monotone, "final_within": report.final_within,
            "points": [dict(zip(["extra", "mean_eu", "mean_reference", "mean_gap", "gap_se", "combined_se"],
                                row)) for row in report.rows()]})
    return 0 if report.passed else 1


def cmd_report(args):
    run = Path(args.run_dir)
    summary = run / "summary.csv"
    if not summary.exists():
        raise DecisionUQError(f"{run} has no summary.csv")
    with summary.open(encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    for r in rows:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    comp = run / "comparison.json"
    if comp.exists():
        data = json.loads(comp.read_text(encoding="utf-8"))
        if "p_value_eu_vs_random" in data:
            print(f"permutation p (eu vs random): {data['p_value_eu_vs_random']}")
        if "eu_minus_tu" in data:
            print(f"AUC-DF eu - tu: {data['eu_minus_tu']['formatted']}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decisionuq",
                                     description="Decision-theoretic uncertainty for black-box generators.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw samples for one input")
    _global(p)
    p.add_argument("input")
    p.add_argument("--backend", default="gen")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--query-id", default="cli")
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("score", help="utility of a hypothesis against a reference")
    _global(p)
    p.add_argument("hypothesis")
    p.add_argument("reference")
    p.add_argument("--question", default="")
    p.add_argument("--utility", choices=["exact-match", "token-f1", "chrf"], default=None)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("uq", help="MBR prediction and Bayes risk for one input")
    _global(p)
    p.add_argument("input")
    p.add_argument("--backend", default="gen")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--query-id", default="cli")
    p.set_defaults(fn=cmd_uq)

    p = sub.add_parser("eu", help="epistemic uncertainty estimate for one input")
    _global(p)
    p.add_argument("input")
    p.add_argument("--backend", default="gen")
    p.add_argument("--l", type=int, default=5)
    p.add_argument("--m", type=int, default=8)
    p.add_argument("--extra", type=int, default=4)
    p.add_argument("--rewrites", type=int, default=8)
    p.add_argument("--p-x", choices=["rewrite", "fixed"], default="rewrite")
    p.add_argument("--query-id", default="cli")
    p.set_defaults(fn=cmd_eu)

    for name, fn, helptext in (("calibrate", cmd_calibrate, "QA calibration run"),
                               ("defer", cmd_defer, "deferral run")):
        p = sub.add_parser(name, help=helptext)
        _global(p)
        p.add_argument("--out", help="output directory (default: the config's 'output')")
        p.set_defaults(fn=fn)

    p = sub.add_parser("oracle-validate", help="convergence check against the testbed oracle")
    _global(p)
    p.add_argument("--task", help="task file (YAML)")
    p.add_argument("--input", help="test input (default: first input of the task)")
    p.add_argument("--schedule", type=int, nargs="+", default=[1, 2, 4, 8, 16])
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--l", type=int, default=50)
    p.add_argument("--m", type=int, default=200)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_oracle_validate)

    p = sub.add_parser("report", help="print the summary of a finished run")
    p.add_argument("run_dir")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "max_concurrency", None):
        set_max_concurrency(args.max_concurrency)
    try:
        code = args.fn(args)
    except DecisionUQError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return int(code or 0)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
