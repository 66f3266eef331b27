"""Regenerate the replay fixtures under fixtures/.

The toy generators below stand in for real LMs: a QA answerer with a fixed
answer distribution per question, a string-matching judge, and a word-level
"translator" whose noise shrinks with the number of demonstrations. Every
call they serve is recorded in the fixture cache, so the shipped configs
replay without any of this code.

    python scripts/build_fixtures.py
"""
import hashlib
import json
import re
import shutil
import sys
from pathlib import Path

import numpy as np

from decisionuq.backends import FunctionBackend
from decisionuq.harness.config import Runtime, load_config
from decisionuq.harness.runs import run_deferral, run_qa_calibration

ROOT = Path(__file__).resolve().parents[1] / "fixtures"

COLORS = ["red", "green", "blue", "yellow", "purple", "orange", "black", "white"]
WORDS = ["the", "a", "cat", "dog", "bird", "house", "river", "tree", "sees", "likes", "near", "big",
         "small", "old", "new", "runs", "sleeps", "under", "over", "green", "quiet", "loud"]


def _h(*parts) -> int:
    return int.from_bytes(hashlib.sha256("\x1f".join(map(str, parts)).encode()).digest()[:4], "little")


def _rng(request, i, salt=""):
    return np.random.default_rng([_h(salt, request.seed if request.seed is not None else -1), i])


# ---------------------------------------------------------------------------
# QA
# ---------------------------------------------------------------------------

def qa_questions(n=40):
    rng = np.random.default_rng(11)
    out = []
    for k in range(n):
        truth = COLORS[int(rng.integers(len(COLORS)))]
        sharp = float(rng.uniform(0.2, 0.95))
        others = [c for c in COLORS if c != truth]
        probs = np.full(len(others), (1 - sharp) / len(others))
        out.append({"id": f"q{k:03d}", "question": f"What colour is object number {k}?",
                    "answers": [truth], "_dist": ([truth] + others, [sharp] + list(probs))})
    return out


def qa_backend(questions):
    by_q = {q["question"]: q for q in questions}

    def answer(prompt, request, i):
        if prompt.startswith("Question:") and "Is the possible answer" in prompt:
            m = re.search(r"Possible answer: (.*)\n", prompt)
            peers = prompt.split("brainstormed answers:\n", 1)[1].split("\nPossible answer:", 1)[0].split("\n")
            share = sum(p == m.group(1) for p in peers) / max(len(peers), 1)
            return "(A)" if _rng(request, i, "ptrue").random() < share else "(B)"
        if prompt.startswith("Provide the probability"):
            return f"{int(_rng(request, i, 'verb').integers(60, 101))}%"
        q = by_q[prompt.strip()]
        texts, probs = q["_dist"]
        return texts[int(_rng(request, i, "qa").choice(len(texts), p=probs))]

    return FunctionBackend(answer, backend_id="toy-qa")


def judge_backend():
    def grade(prompt, request, i):
        ref = re.search(r"Reference answer: (.*)\n", prompt).group(1).strip().lower()
        hyp = re.search(r"Proposed answer: (.*)\n", prompt).group(1).strip().lower()
        return "Same colour.\nRating: 100" if ref == hyp else "Different colour.\nRating: 0"

    return FunctionBackend(grade, backend_id="toy-judge")


# ---------------------------------------------------------------------------
# translation
# ---------------------------------------------------------------------------

LEXICON = {w: w[::-1] for w in WORDS}


def mt_sentences(n, seed):
    rng = np.random.default_rng(seed)
    return [" ".join(WORDS[j] for j in rng.choice(len(WORDS), size=int(rng.integers(3, 7))))
            for _ in range(n)]


def mt_backend():
    def translate(prompt, request, i):
        rng = _rng(request, i, "mt")
        if prompt.startswith("Please write"):
            k = int(re.search(r"write (\d+) sentences", prompt).group(1))
            source = prompt.strip().split("\n")[-1].split()
            return "\n\n".join(" ".join(rng.permutation(source)) for _ in range(k))
        lines = prompt.rstrip("\n").split("\n")
        n_demos = (len(lines) - 1) // 2
        noise = 0.6 / (1.0 + n_demos / 4.0)
        out = []
        for w in lines[-1].split():
            u = rng.random()
            if u < noise / 2:
                continue
            out.append(LEXICON.get(w, w) if u > noise else WORDS[int(rng.integers(len(WORDS)))][::-1])
        return " ".join(out) or LEXICON.get(lines[-1].split()[0], "")

    return FunctionBackend(translate, backend_id="toy-mt")


def main():
    qa_dir, mt_dir = ROOT / "qa", ROOT / "mt"
    for d in (qa_dir, mt_dir):
        if d.exists():
            shutil.rmtree(d)
        d.mkdir(parents=True)

    questions = qa_questions()
    with (qa_dir / "dataset.jsonl").open("w", encoding="utf-8") as fh:
        for q in questions:
            fh.write(json.dumps({k: v for k, v in q.items() if not k.startswith("_")}) + "\n")
    shutil.copy(ROOT / "templates" / "calibrate.yaml", qa_dir / "config.yaml")
    cfg = load_config(qa_dir / "config.yaml")
    rt = Runtime(cfg, offline=False)
    rt.register("gen", qa_backend(questions))
    rt.register("judge", judge_backend())
    run_qa_calibration(cfg, qa_dir / "_build", runtime=rt)
    shutil.rmtree(qa_dir / "_build")

    src = mt_sentences(20, 1)
    pool = mt_sentences(60, 2)
    (mt_dir / "test.tsv").write_text("".join(f"{s}\t{' '.join(LEXICON[w] for w in s.split())}\n"
                                             for s in src), encoding="utf-8")
    (mt_dir / "pool.tsv").write_text("".join(f"{s}\t{' '.join(LEXICON[w] for w in s.split())}\n"
                                             for s in pool), encoding="utf-8")
    shutil.copy(ROOT / "templates" / "defer.yaml", mt_dir / "config.yaml")
    cfg = load_config(mt_dir / "config.yaml")
    rt = Runtime(cfg, offline=False)
    rt.register("gen", mt_backend())
    run_deferral(cfg, mt_dir / "_build", runtime=rt)
    shutil.rmtree(mt_dir / "_build")
    print(f"fixtures written under {ROOT}", file=sys.stderr)


if __name__ == "__main__":
    main()
