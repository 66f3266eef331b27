"""Generalised ECE, reliability diagrams, AURAC, bootstrap CIs and prompt-based confidence."""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .errors import NoRecords
from .reports import csv_text, svg_plot
from .utility import TextTemplate, ask_and_parse


@dataclass
class CalibrationRecord:
    query_id: str
    predicted_risk: float
    realized_risk: float
    realized_utility: float
    method: str = "prob"
    group: str | None = None

    def __post_init__(self):
        for name in ("predicted_risk", "realized_risk"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


@dataclass(frozen=True)
class BinSpec:
    scheme: str = "equal-mass"
    n_bins: int = 10

    def __post_init__(self):
        if self.scheme not in ("equal-mass", "equal-width"):
            raise ValueError(f"unknown binning scheme {self.scheme!r}")
        if self.n_bins < 2:
            raise ValueError("need at least 2 bins")


@dataclass
class Bin:
    lower: float
    upper: float
    count: int
    mean_predicted: float
    mean_realized: float
    band: tuple | None = None

    @property
    def gap(self):
        return self.mean_realized - self.mean_predicted

    @property
    def overconfident(self):
        # realised risk above predicted risk, i.e. confidence below the diagonal
        return self.count > 0 and self.mean_realized > self.mean_predicted


@dataclass
class ReliabilityDiagram:
    bins: list = field(default_factory=list)

    @property
    def total(self):
        return sum(b.count for b in self.bins)

    def overconfident_bins(self):
        return [b for b in self.bins if b.overconfident]

    def to_csv(self) -> str:
        header = ["lower", "upper", "count", "mean_predicted_risk", "mean_realized_risk",
                  "overconfident", "band_lo", "band_hi"]
        rows = [[b.lower, b.upper, b.count, b.mean_predicted, b.mean_realized, b.overconfident,
                 b.band[0] if b.band else None, b.band[1] if b.band else None] for b in self.bins]
        return csv_text(header, rows)

    def to_svg(self, title="Reliability diagram") -> str:
        """Confidence (1 - risk) on both axes; points below the diagonal are overconfident."""
        full = [b for b in self.bins if b.count > 0]
        xs = [1.0 - b.mean_predicted for b in full]
        ys = [1.0 - b.mean_realized for b in full]
        return svg_plot({"binned": (xs, ys)}, title, "predicted confidence (1 - risk)",
                        "realized utility-scale confidence", xlim=(0, 1), ylim=(0, 1),
                        diagonal=True, markers=True)


def _arrays(records):
    if len(records) == 0:
        raise NoRecords("no calibration records")
    pred = np.array([r.predicted_risk for r in records], dtype=np.float64)
    real = np.array([r.realized_risk for r in records], dtype=np.float64)
    return pred, real


def assign_bins(predicted: np.ndarray, bins: BinSpec):
    """Return (bin index per record, edges of length n_bins + 1)."""
    predicted = np.asarray(predicted, dtype=np.float64)
    b = bins.n_bins
    if bins.scheme == "equal-width":
        edges = np.linspace(0.0, 1.0, b + 1)
        idx = np.clip(np.floor(predicted * b).astype(np.int64), 0, b - 1)
        return idx, edges
    order = np.argsort(predicted, kind="stable")
    idx = np.empty(len(predicted), dtype=np.int64)
    edges = [0.0]
    chunks = np.array_split(order, b)
    for k, chunk in enumerate(chunks):
        idx[chunk] = k
        if k < b - 1:
            nxt = chunks[k + 1]
            if len(chunk) and len(nxt):
                edges.append(0.5 * (predicted[chunk[-1]] + predicted[nxt[0]]))
            else:
                edges.append(edges[-1])
    edges.append(1.0)
    return idx, np.array(edges)


def _binned(records, bins):
    pred, real = _arrays(records)
    idx, edges = assign_bins(pred, bins)
    counts, sp, sr = _kernels.binned_sums(idx, pred, real, bins.n_bins)
    return counts, sp, sr, edges


def ece(records: Sequence[CalibrationRecord], bins: BinSpec = BinSpec()) -> float:
    """sum over non-empty bins of (count / total) * |mean realized - mean predicted|."""
    counts, sp, sr, _ = _binned(records, bins)
    nz = counts > 0
    n = counts.sum()
    gaps = np.abs(sr[nz] / counts[nz] - sp[nz] / counts[nz])
    return float(np.sum(counts[nz] / n * gaps))


def reliability_diagram(records: Sequence[CalibrationRecord], bins: BinSpec = BinSpec(),
                        band_sims: int = 0, seed: int = 0, level: float = 95.0) -> ReliabilityDiagram:
    counts, sp, sr, edges = _binned(records, bins)
    band = None
    if band_sims:
        band = _bin_bands(records, bins, band_sims, seed, level)
    out = []
    for k in range(bins.n_bins):
        c = int(counts[k])
        out.append(Bin(float(edges[k]), float(edges[k + 1]), c,
                       float(sp[k] / c) if c else float("nan"),
                       float(sr[k] / c) if c else float("nan"),
                       band[k] if band is not None and c else None))
    return ReliabilityDiagram(out)


def _bin_bands(records, bins, sims, seed, level):
    pred, real = _arrays(records)
    idx, _ = assign_bins(pred, bins)
    rng = np.random.default_rng(seed)
    lo_q, hi_q = (100 - level) / 2, 100 - (100 - level) / 2
    bands = []
    for k in range(bins.n_bins):
        members = real[idx == k]
        if len(members) == 0:
            bands.append(None)
            continue
        draws = rng.integers(0, len(members), size=(sims, len(members)))
        means = members[draws].mean(axis=1)
        bands.append((float(np.percentile(means, lo_q)), float(np.percentile(means, hi_q))))
    return bands


def aurac(uncertainty, utility, ids=None, grid: int = 100) -> float:
    """Area under the rejection-accuracy curve on a fixed rejection grid.

    For rejection rate ``k / grid`` the ``ceil((grid - k) / grid * n)`` records
    with the lowest uncertainty are retained (ties by id); the curve value is
    their mean utility, and the result is the mean over ``k = 0 .. grid-1``.
    """
    u = np.asarray(uncertainty, dtype=np.float64)
    v = np.asarray(utility, dtype=np.float64)
    n = len(u)
    if n == 0:
        raise NoRecords("aurac needs records")
    if len(v) != n:
        raise ValueError("uncertainty and utility lengths differ")
    keys = np.arange(n) if ids is None else np.asarray(ids)
    order = np.lexsort((keys, u))
    csum = np.cumsum(v[order])
    ks = np.arange(grid)
    keep = -((-(grid - ks) * n) // grid)
    keep = np.maximum(keep, 1)
    return float(np.mean(csum[keep - 1] / keep))


def aurac_records(records: Sequence[CalibrationRecord], grid: int = 100) -> float:
    return aurac([r.predicted_risk for r in records], [r.realized_utility for r in records],
                 ids=[r.query_id for r in records], grid=grid)


def bootstrap_ci(metric: Callable, records, n_sims: int = 10000, level: float = 95.0,
                 seed: int = 0, batch_size: int = 1000, workers: int = 1):
    """Percentile bootstrap over records resampled with replacement.

    Simulations are generated in fixed-size batches, each seeded from its own
    spawned child of ``SeedSequence(seed)``; running batches in parallel
    (``workers > 1``) reproduces the serial result.
    """
    n = len(records)
    if n == 0:
        raise NoRecords("bootstrap needs records")
    point = float(metric(records))
    is_array = isinstance(records, np.ndarray)
    n_batches = -(-n_sims // batch_size)
    children = np.random.SeedSequence(seed).spawn(n_batches)

    def run(b):
        size = min(batch_size, n_sims - b * batch_size)
        rng = np.random.default_rng(children[b])
        draws = rng.integers(0, n, size=(size, n))
        if is_array:
            return [float(metric(records[d])) for d in draws]
        return [float(metric([records[i] for i in d])) for d in draws]

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, range(n_batches)))
    else:
        parts = [run(b) for b in range(n_batches)]
    values = np.array([v for part in parts for v in part])
    tail = (100.0 - level) / 2
    lo, hi = np.percentile(values, [tail, 100.0 - tail])
    return point, float(lo), float(hi)


# ---------------------------------------------------------------------------
# prompt-based confidence baselines
# ---------------------------------------------------------------------------

def load_builtin_template(name: str) -> TextTemplate:
    """Load one of the shipped templates: judge, p_true, verb_2s, rewrite."""
    base = resources.files("decisionuq").joinpath("templates")
    with resources.as_file(base.joinpath(f"{name}.txt")) as path:
        return TextTemplate.load(path)


def prompt_confidence(kind: str, context, answer: str, peer_generations: Sequence[str] = (),
                      backend=None, template: TextTemplate | None = None,
                      seed: int | None = None) -> float:
    """Elicit a confidence in [0, 1] for ``answer`` by prompting ``backend``.

    ``p_true`` shows the model its own peer generations and asks whether the
    proposed answer is true; ``verb_2s`` asks for a verbalised probability
    for an answer produced in an earlier, separate call.
    """
    if kind not in ("p_true", "verb_2s"):
        raise ValueError(f"unknown confidence method {kind!r}")
    if kind == "p_true" and not peer_generations:
        raise ValueError("p_true needs the model's peer generations")
    template = template or load_builtin_template(kind)
    peers = "\n".join(peer_generations)
    prompt = template.render(question=context.x_star, answer=answer, peers=peers)
    return ask_and_parse(backend, prompt, template.parse, template.max_attempts, seed=seed, tag=kind)
