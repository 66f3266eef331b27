"""Synthetic Bayesian generators with exact posterior predictives.

Two model families share one interface:

* ``DirCatModel``: an independent Dirichlet-categorical model per input.
* ``MixtureModel``: a finite set of hypotheses ``theta_k``, each a table of
  ``p(y | x, theta_k)``, with a prior over ``k``.

Alphabet elements are plain text tokens, so the oracle backend plugs into the
same prompt, cache and utility machinery as a real generator.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .backends.base import Backend
from .backends.prompts import DEFAULT_TEMPLATE
from .errors import DemoOutsideAlphabet, UnknownInput
from .utility import DEFAULT_RISK, RiskTransform, UtilitySpec, utility_table


@dataclass(frozen=True)
class PosteriorState:
    """Observation counts per (input, output)."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64)
        if (c < 0).any():
            raise ValueError("counts must be non-negative")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    def update(self, xi: int, yi: int, k: int = 1) -> "PosteriorState":
        c = self.counts.copy()
        c[xi, yi] += k
        return PosteriorState(c)


class _Alphabets:
    inputs: list
    outputs: list
    p_x: np.ndarray

    def _init_alphabets(self, inputs, outputs, p_x):
        self.inputs = [str(x) for x in inputs]
        self.outputs = [str(y) for y in outputs]
        if len(set(self.inputs)) != len(self.inputs) or len(set(self.outputs)) != len(self.outputs):
            raise ValueError("alphabet entries must be distinct")
        self._xi = {x: i for i, x in enumerate(self.inputs)}
        self._yi = {y: i for i, y in enumerate(self.outputs)}
        p = np.full(len(self.inputs), 1.0 / len(self.inputs)) if p_x is None else np.asarray(p_x, float)
        if p.shape != (len(self.inputs),) or (p < 0).any() or not np.isclose(p.sum(), 1.0):
            raise ValueError("p_x must be a probability vector over the inputs")
        self.p_x = p / p.sum()

    def x_index(self, x: str) -> int:
        try:
            return self._xi[x]
        except KeyError:
            raise UnknownInput(f"input {x!r} is not in the model's input alphabet") from None

    def y_index(self, y: str) -> int:
        return self._yi[y]

    def state_from_demos(self, demos: Sequence, base: PosteriorState | None = None) -> PosteriorState:
        c = np.zeros((len(self.inputs), len(self.outputs)), dtype=np.int64) if base is None \
            else base.counts.copy()
        for x, y in demos:
            xi, yi = self._xi.get(x), self._yi.get(y)
            if xi is None or yi is None:
                raise DemoOutsideAlphabet(f"demonstration ({x!r}, {y!r}) is outside the alphabet")
            c[xi, yi] += 1
        return PosteriorState(c)

    def empty_state(self) -> PosteriorState:
        return PosteriorState(np.zeros((len(self.inputs), len(self.outputs)), dtype=np.int64))

    def sample_inputs(self, k: int, rng) -> list:
        return [self.inputs[i] for i in rng.choice(len(self.inputs), size=k, p=self.p_x)]


class DirCatModel(_Alphabets):
    """theta_x ~ Dirichlet(alpha[x]) independently for every input x."""

    def __init__(self, inputs, outputs, alpha, p_x=None):
        self._init_alphabets(inputs, outputs, p_x)
        a = np.broadcast_to(np.asarray(alpha, dtype=np.float64),
                            (len(self.inputs), len(self.outputs))).copy()
        if not (a > 0).all():
            raise ValueError("all concentrations must be positive")
        self.alpha = a

    def predictive(self, state: PosteriorState, x: str) -> np.ndarray:
        xi = self.x_index(x)
        w = self.alpha[xi] + state.counts[xi]
        return w / w.sum()

    def theta_draws(self, state: PosteriorState, x: str, n_draws: int, rng):
        """Posterior draws of p(y | x, theta): (weights, probabilities, exact?)."""
        xi = self.x_index(x)
        probs = rng.dirichlet(self.alpha[xi] + state.counts[xi], size=n_draws)
        return np.full(n_draws, 1.0 / n_draws), probs, False


class MixtureModel(_Alphabets):
    """A finite hypothesis space: ``tables[k, x, y] = p(y | x, theta_k)``."""

    def __init__(self, inputs, outputs, tables, prior=None, p_x=None):
        self._init_alphabets(inputs, outputs, p_x)
        t = np.asarray(tables, dtype=np.float64)
        if t.ndim != 3 or t.shape[1:] != (len(self.inputs), len(self.outputs)):
            raise ValueError("tables must have shape (K, |X|, |Y|)")
        if (t < 0).any() or not np.allclose(t.sum(axis=2), 1.0):
            raise ValueError("each table row must be a probability vector")
        self.tables = t
        k = t.shape[0]
        pr = np.full(k, 1.0 / k) if prior is None else np.asarray(prior, dtype=np.float64)
        if pr.shape != (k,) or (pr < 0).any() or not np.isclose(pr.sum(), 1.0):
            raise ValueError("prior must be a probability vector over hypotheses")
        self.prior = pr / pr.sum()

    def posterior_weights(self, state: PosteriorState) -> np.ndarray:
        c = state.counts
        with np.errstate(divide="ignore"):
            logt = np.log(np.where(c[None] > 0, self.tables, 1.0))
        ll = (logt * c[None]).sum(axis=(1, 2))
        with np.errstate(divide="ignore"):
            lw = np.log(self.prior) + ll
        if not np.isfinite(lw).any():
            raise ValueError("observed demonstrations have zero probability under every hypothesis")
        lw -= lw[np.isfinite(lw)].max()
        w = np.exp(lw)
        return w / w.sum()

    def predictive(self, state: PosteriorState, x: str) -> np.ndarray:
        xi = self.x_index(x)
        return self.posterior_weights(state) @ self.tables[:, xi, :]

    def theta_draws(self, state: PosteriorState, x: str, n_draws: int, rng):
        # the posterior is discrete, so enumerate it exactly
        xi = self.x_index(x)
        return self.posterior_weights(state), self.tables[:, xi, :], True


def posterior_predictive(state: PosteriorState, model, x: str) -> np.ndarray:
    return model.predictive(state, x)


# ---------------------------------------------------------------------------
# oracle backend
# ---------------------------------------------------------------------------

class OracleBackend(Backend):
    """Samples from the model's exact posterior predictive given the prompt's demos.

    ``sharpen != 1`` raises the predictive to that power and renormalises,
    producing a deliberately miscalibrated generator.
    """

    def __init__(self, model, initial_demos: Sequence = (), sharpen: float = 1.0,
                 backend_id: str = "oracle", seed: int | None = 0, template=DEFAULT_TEMPLATE):
        self.model = model
        self.base_state = model.state_from_demos(initial_demos)
        self.sharpen = sharpen
        self.backend_id = backend_id
        self.template = template
        self._rng = np.random.default_rng(seed)

    def predictive_for(self, context) -> np.ndarray:
        state = self.model.state_from_demos(context.demos, base=self.base_state)
        p = self.model.predictive(state, context.x_star)
        if self.sharpen != 1.0:
            p = p ** self.sharpen
            p = p / p.sum()
        return p

    def _generate(self, prompt, request):
        p = self.predictive_for(request.context)
        rng = self._rng if request.seed is None else np.random.default_rng(request.seed)
        idx = rng.choice(len(p), size=request.n_samples, p=p)
        return [self.model.outputs[i] for i in idx]


def oracle_backend(model, initial_demos: Sequence = (), **kwargs) -> OracleBackend:
    return OracleBackend(model, initial_demos, **kwargs)


class ModelInputs:
    """Input distribution p_x taken from a testbed model."""

    def __init__(self, model):
        self.model = model

    def draw(self, context, k: int, rng) -> list:
        return self.model.sample_inputs(k, rng)


# ---------------------------------------------------------------------------
# the Bayesian-limit reference value
# ---------------------------------------------------------------------------

@dataclass
class EUReference:
    value: float
    standard_error: float
    pooled_term: float
    mean_min_term: float
    exact: bool


def eu_reference(model, state: PosteriorState, x_star: str, utility: UtilitySpec,
                 transform: RiskTransform = DEFAULT_RISK, candidates: Sequence[str] | None = None,
                 n_draws: int = 4000, seed: int | np.random.Generator = 0) -> EUReference:
    """min_c E_theta R(c, theta) - E_theta min_c R(c, theta) under the exact posterior.

    ``R(c, theta)`` is the expected risk of candidate ``c`` under
    ``p(y | x_star, theta)``. Candidates default to the whole output alphabet.
    """
    cands = list(model.outputs if candidates is None else candidates)
    if not cands:
        raise ValueError("need at least one candidate")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, probs, exact = model.theta_draws(state, x_star, n_draws, rng)
    risk = transform(utility_table(cands, model.outputs, utility, x_star))  # (C, |Y|)
    rho = probs @ risk.T  # (D, C)
    pooled = weights @ rho
    best = int(np.argmin(pooled))
    mins = rho.min(axis=1)
    term_b = float(weights @ mins)
    value = float(pooled[best] - term_b)
    if exact:
        se = 0.0
    else:
        diff = rho[:, best] - mins
        se = float(diff.std(ddof=1) / np.sqrt(len(diff)))
    return EUReference(max(value, 0.0), se, float(pooled[best]), term_b, exact)


# ---------------------------------------------------------------------------
# convergence validation
# ---------------------------------------------------------------------------

@dataclass
class ConvergencePoint:
    extra: int
    mean_eu: float
    mean_reference: float
    mean_gap: float
    gap_se: float
    combined_se: float
    gaps: np.ndarray = field(repr=False, default=None)


@dataclass
class ConvergenceReport:
    points: list
    monotone: bool
    final_within: bool

    @property
    def passed(self) -> bool:
        return self.monotone and self.final_within

    def rows(self):
        return [[p.extra, p.mean_eu, p.mean_reference, p.mean_gap, p.gap_se, p.combined_se]
                for p in self.points]


def validate_convergence(model, context, utility: UtilitySpec, schedule: Sequence[int] = (1, 2, 4, 8, 16),
                         seeds: Sequence[int] = tuple(range(20)), l: int = 50, m: int = 200,
                         transform: RiskTransform = DEFAULT_RISK, n_draws: int = 4000,
                         initial_demos: Sequence = (), z: float = 2.0) -> ConvergenceReport:
    """Run the EU estimator against the oracle for growing numbers of pseudo-demos.

    For every schedule entry and seed the gap ``reference - eu`` is recorded,
    where the reference uses the estimator's own action space. The gap must
    not increase significantly between consecutive entries (paired over
    seeds, ``z`` standard errors of the mean difference). The final mean gap
    must lie within ``z`` combined standard errors, i.e. the root mean square
    of the estimator's reported error combined with the reference's.
    """
    from .epistemic import EUParams, estimate_eu

    backend = OracleBackend(model, initial_demos, backend_id="oracle-validate")
    inputs = ModelInputs(model)
    state = model.state_from_demos(context.demos, base=backend.base_state)
    ref_cache = {}
    points = []
    for extra in schedule:
        eus, refs, ses, ref_ses = [], [], [], []
        for s in seeds:
            est = estimate_eu(context, backend, inputs, EUParams(l=l, m=m, extra=extra), utility,
                              transform, seed=s, compute_tu=False)
            key = tuple(sorted(set(est.action_space)))
            if key not in ref_cache:
                ref_cache[key] = eu_reference(model, state, context.x_star, utility, transform,
                                              list(key), n_draws=n_draws, seed=len(ref_cache))
            ref = ref_cache[key]
            eus.append(est.eu)
            refs.append(ref.value)
            ses.append(est.standard_error)
            ref_ses.append(ref.standard_error)
        eus, refs, ses, ref_ses = map(np.asarray, (eus, refs, ses, ref_ses))
        gaps = refs - eus
        k = len(seeds)
        gap_se = float(gaps.std(ddof=1) / np.sqrt(k)) if k > 1 else 0.0
        comb = float(np.sqrt(np.mean(ses ** 2) + np.mean(ref_ses ** 2)))
        points.append(ConvergencePoint(extra, float(eus.mean()), float(refs.mean()),
                                       float(gaps.mean()), gap_se, comb, gaps))
    monotone = True
    for a, b in zip(points, points[1:]):
        d = b.gaps - a.gaps
        se = d.std(ddof=1) / np.sqrt(len(d)) if len(d) > 1 else 0.0
        if d.mean() > z * se + 1e-12:
            monotone = False
    last = points[-1]
    final_within = abs(last.mean_gap) <= z * last.combined_se + 1e-12
    return ConvergenceReport(points, monotone, final_within)


# ---------------------------------------------------------------------------
# declarative task files
# ---------------------------------------------------------------------------

def load_task(path_or_dict):
    """Build a model (and optional utility table) from a YAML/JSON task description.

    Keys: ``inputs``, ``outputs``, ``p_x``; then either ``alpha`` (scalar,
    per-output list or full matrix) for a Dirichlet-categorical task, or
    ``hypotheses`` (list of |X| x |Y| tables) plus optional ``prior`` for a
    mixture task. ``utility_matrix`` (|Y| x |Y|, rows = prediction) is
    optional; ``demos`` lists initial (x, y) pairs.
    """
    if isinstance(path_or_dict, (str, Path)):
        spec = yaml.safe_load(Path(path_or_dict).read_text(encoding="utf-8"))
    else:
        spec = dict(path_or_dict)
    if "hypotheses" in spec:
        model = MixtureModel(spec["inputs"], spec["outputs"], spec["hypotheses"],
                             spec.get("prior"), spec.get("p_x"))
    else:
        model = DirCatModel(spec["inputs"], spec["outputs"], spec.get("alpha", 1.0), spec.get("p_x"))
    utility = UtilitySpec("exact-match")
    if spec.get("utility_matrix") is not None:
        table = np.asarray(spec["utility_matrix"], dtype=np.float64)
        index = {y: i for i, y in enumerate(model.outputs)}
        utility = UtilitySpec("callable", {"fn": lambda h, r: table[index[h], index[r]]})
    demos = [tuple(d) for d in spec.get("demos", [])]
    return model, utility, demos
