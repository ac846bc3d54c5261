"""Empirical checks of the piecewise structure of the tree-size cost in the parameters.

Slice scans locate the breakpoints of ``t -> sum_i V(I_i, w0 + t u)``, the
census counts distinct cost vectors over a parameter sample, the shattering
search produces pseudo-dimension lower bounds and the degree probe measures
the polynomial degree of an MLP score inside its activation regions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .engine import BncConfig, CostEvaluator, PenaltySpec
from .policy import MlpScorer, PolicyBundle

SCAN_SCHEMA = "bnclab.scan/1"
CENSUS_SCHEMA = "bnclab.census/1"


class ProbeError(ValueError):
    pass


def make_evaluators(instances, template: PolicyBundle, cfg: BncConfig,
                    penalties: PenaltySpec = PenaltySpec()) -> list[CostEvaluator]:
    return [CostEvaluator(inst, template, cfg, penalties) for inst in instances]


# ---------------------------------------------------------------------------
# slice scans


@dataclass
class SliceScan:
    w0: np.ndarray
    u: np.ndarray
    interval: tuple
    breakpoints: list
    piece_values: list
    grid0: int
    bisect_tol: float
    samples: dict = field(default_factory=dict)  # t -> total cost
    violations: list = field(default_factory=list)
    jitter: float = 0.0
    refinements: int = 0
    switch_points: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def value_at(self, t: float) -> float:
        j = int(np.searchsorted(self.breakpoints, t))
        return self.piece_values[j]

    def rows(self) -> list[tuple[float, float]]:
        return sorted(self.samples.items())


class _Slice:
    def __init__(self, evaluators, w0, u):
        self.evaluators = evaluators
        self.w0, self.u = w0, u
        self.cache: dict[float, float] = {}

    def __call__(self, t: float) -> float:
        t = float(t)
        v = self.cache.get(t)
        if v is None:
            w = self.w0 + t * self.u
            v = float(sum(ev(w) for ev in self.evaluators))
            self.cache[t] = v
        return v


def _brackets(f, a, b, fa, fb, tol, out):
    """Append (lo, hi) brackets narrower than ``tol`` around every change in [a, b]."""
    stack = [(a, b, fa, fb)]
    found = []
    while stack:
        a, b, fa, fb = stack.pop()
        if b - a < tol:
            found.append((a, b))
            continue
        mid = 0.5 * (a + b)
        fm = f(mid)
        if fm != fb:
            stack.append((mid, b, fm, fb))
        if fm != fa:
            stack.append((a, mid, fa, fm))
    out.extend(sorted(found))


def _scan_once(f, lo, hi, grid0, tol, max_refine, extra=()):
    points = list(np.linspace(lo, hi, grid0)) + sorted(extra)
    for rnd in range(max_refine + 1):
        points = sorted(set(points))
        vals = [f(t) for t in points]
        brackets: list[tuple] = []
        for (a, fa), (b, fb) in zip(zip(points, vals), zip(points[1:], vals[1:])):
            if fa != fb:
                _brackets(f, a, b, fa, fb, tol, brackets)
        brackets.sort()
        # piece j spans [end of bracket j-1, start of bracket j]
        edges = [lo] + [x for br in brackets for x in br] + [hi]
        spans = list(zip(edges[0::2], edges[1::2]))
        piece_values = [f(a) for a, _ in spans]
        bad, extra = [], []
        for (a, b), v in zip(spans, piece_values):
            for q in (0.25, 0.5, 0.75):
                t = a + q * (b - a)
                got = f(t)
                if got != v:
                    bad.append({"t": t, "expected": v, "got": got})
                    extra.append(t)
            if f(b) != v:
                bad.append({"t": b, "expected": v, "got": f(b)})
                extra.append(b)
        if not bad:
            return brackets, piece_values, [], rnd
        points.extend(extra)
    return brackets, piece_values, bad, max_refine


def _switches(evaluators, w0, u, lo, hi, tol) -> set:
    pts: set = set()
    for ev in evaluators:
        fn = getattr(ev, "switch_points", None)
        if fn is not None:
            pts |= fn(w0, u, lo, hi, tol)
    return pts


def _scan(evaluators, w0, u, lo, hi, grid0, tol, max_refine, rounds: int = 8):
    """Grid scan seeded with the decision switch points the evaluators know of.

    Sampling explores new decisions, which can reveal new switch points, so
    the scan repeats until the set of switch points is stable.
    """
    f = _Slice(evaluators, w0, u)
    extra = _switches(evaluators, w0, u, lo, hi, tol)
    for _ in range(rounds):
        result = _scan_once(f, lo, hi, grid0, tol, max_refine, extra)
        more = _switches(evaluators, w0, u, lo, hi, tol)
        if more <= extra:
            break
        extra |= more
    return f, result, extra


def scan_slice(
    evaluators,
    w0,
    u,
    interval=(-1.0, 1.0),
    grid0: int = 1024,
    bisect_tol: float = 1e-7,
    *,
    seed: int = 0,
    max_refine: int = 4,
) -> SliceScan:
    """Breakpoints and piece values of the summed cost along ``w0 + t u``.

    The grid is augmented with points bracketing every switch of a recorded
    decision (for evaluators that expose ``switch_points``), so pieces
    narrower than the grid spacing are not stepped over. Changes between
    neighbouring sample points are bisected to brackets narrower than
    ``bisect_tol``; breakpoints are reported at bracket midpoints. Each
    piece is re-sampled at three interior points. Disagreements are added to
    the grid and the scan refined; if they persist the anchor is jittered once
    (seeded, at most 1e-9 |u|) before the disagreements are reported as
    structural violations.
    """
    if grid0 < 2:
        raise ProbeError("grid0 must be >= 2")
    w0 = np.asarray(w0, float)
    u = np.asarray(u, float)
    norm = float(np.linalg.norm(u))
    if norm == 0.0:
        raise ProbeError("direction u must be nonzero")
    lo, hi = map(float, interval)
    if not lo < hi:
        raise ProbeError("empty interval")
    f, (brackets, values, bad, rnd), extra = _scan(evaluators, w0, u, lo, hi, grid0, bisect_tol, max_refine)
    jitter = 0.0
    if bad:
        rng = np.random.default_rng(seed)
        d = rng.standard_normal(len(w0))
        d *= 1e-9 * norm / max(float(np.linalg.norm(d)), 1e-300)
        jitter = float(np.linalg.norm(d))
        f, (brackets, values, bad, rnd), extra = _scan(evaluators, w0 + d, u, lo, hi, grid0, bisect_tol,
                                                       max_refine)
    return SliceScan(
        w0=w0,
        u=u,
        interval=(lo, hi),
        breakpoints=[0.5 * (a + b) for a, b in brackets],
        piece_values=values,
        grid0=grid0,
        bisect_tol=bisect_tol,
        samples=dict(f.cache),
        violations=bad,
        jitter=jitter,
        refinements=rnd,
        switch_points=len(extra),
    )


def compare_scans(a: SliceScan, b: SliceScan) -> list[str]:
    """Differences between two scans of the same slice (e.g. at two grid sizes)."""
    problems = []
    if a.piece_values != b.piece_values:
        problems.append(f"piece values differ: {a.piece_values} vs {b.piece_values}")
    elif any(abs(x - y) >= max(a.bisect_tol, b.bisect_tol) for x, y in zip(a.breakpoints, b.breakpoints)):
        problems.append("breakpoints moved by at least the bisection tolerance")
    return problems


# ---------------------------------------------------------------------------
# census


@dataclass(frozen=True)
class ParamSampler:
    """Seeded uniform draws from a box, or a regular grid over a 1-2 dimensional box."""

    dim: int
    count: int
    seed: int = 0
    low: float = -1.0
    high: float = 1.0
    kind: str = "random"

    def draw(self) -> np.ndarray:
        if self.count < 1 or self.dim < 1:
            raise ProbeError("sampler needs count >= 1 and dim >= 1")
        if self.kind == "random":
            return np.random.default_rng(self.seed).uniform(self.low, self.high, (self.count, self.dim))
        if self.kind == "grid":
            side = max(2, int(round(self.count ** (1.0 / self.dim))))
            axes = [np.linspace(self.low, self.high, side)] * self.dim
            return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, self.dim)
        raise ProbeError(f"unknown sampler kind {self.kind!r}")


@dataclass
class OutputCensus:
    n_instances: int
    sampler: ParamSampler
    values: np.ndarray  # samples x instances
    vectors: list  # distinct cost vectors, first-seen order
    q_sums: dict  # action type -> distinct pairs summed over instances
    full_runs: int

    @property
    def count(self) -> int:
        return len(self.vectors)


def census_output_vectors(evaluators, sampler: ParamSampler) -> OutputCensus:
    """Exact count of distinct (V(I_1, w), ..., V(I_N, w)) over the sample."""
    if not evaluators:
        raise ProbeError("census needs at least one instance")
    ws = sampler.draw()
    vals = np.array([[ev(w) for ev in evaluators] for w in ws], dtype=float)
    seen, vectors = set(), []
    for row in vals:
        key = tuple(row)
        if key not in seen:
            seen.add(key)
            vectors.append(key)
    q: dict[int, int] = {}
    for ev in evaluators:
        for k, c in ev.q_sums().items():
            q[k] = q.get(k, 0) + c
    return OutputCensus(
        n_instances=len(evaluators),
        sampler=sampler,
        values=vals,
        vectors=vectors,
        q_sums=dict(sorted(q.items())),
        full_runs=sum(ev.full_runs for ev in evaluators),
    )


# ---------------------------------------------------------------------------
# shattering


@dataclass
class ShatterResult:
    subset: list  # instance indices
    thresholds: list
    witnesses: dict  # pattern bits -> sample index

    @property
    def size(self) -> int:
        return len(self.subset)


def default_thresholds(column: np.ndarray) -> list[float]:
    vals = np.unique(column)
    return [float(0.5 * (a + b)) for a, b in zip(vals[:-1], vals[1:])]


def _patterns(values, subset, thresholds):
    if not subset:
        return {0: 0}
    bits = values[:, subset] > np.asarray(thresholds)
    codes = bits @ (1 << np.arange(len(subset)))
    out = {}
    for i, c in enumerate(codes.tolist()):
        out.setdefault(int(c), i)
    return out


def shatter_search(values: np.ndarray, thresholds=None, max_subset: int = 20) -> ShatterResult:
    """Greedy search for a subset of instances shattered by the sampled parameters.

    ``values`` is the samples x instances cost matrix (e.g. a census). An
    instance joins the subset with the first candidate threshold that keeps all
    2^size above/below patterns realised. The size is a pseudo-dimension lower
    bound.
    """
    if max_subset > 20:
        raise ProbeError("max_subset must be <= 20")
    values = np.asarray(values, float)
    n = values.shape[1]
    cands = thresholds if thresholds is not None else [default_thresholds(values[:, i]) for i in range(n)]
    subset, ths = [], []
    wit = _patterns(values, subset, ths)
    improved = True
    while improved and len(subset) < max_subset:
        improved = False
        for i in range(n):
            if i in subset:
                continue
            for th in cands[i]:
                pats = _patterns(values, subset + [i], ths + [th])
                if len(pats) == 1 << (len(subset) + 1):
                    subset, ths, wit = subset + [i], ths + [th], pats
                    improved = True
                    break
            if improved:
                break
    return ShatterResult(subset, ths, dict(sorted(wit.items())))


# ---------------------------------------------------------------------------
# MLP degree probe


@dataclass
class RegionDegree:
    lo: float
    hi: float
    pattern: tuple
    certified: bool | None  # None: region too short, skipped
    max_ratio: float
    estimated_degree: int | None
    note: str = ""


def _activation_pattern(scorer: MlpScorer, phi) -> tuple:
    act = scorer.spec.activation
    return tuple(int(i) for z in scorer.preactivations(np.atleast_2d(phi)) for i in act.piece_index(z).ravel())


def _finite_difference(vals: np.ndarray, order: int) -> tuple[float, float]:
    """Largest |order-th forward difference| and its term scale over equispaced values."""
    coeffs = np.array([(-1) ** (order - j) * math.comb(order, j) for j in range(order + 1)], float)
    worst, scale = 0.0, 0.0
    for s in range(len(vals) - order):
        window = vals[s : s + order + 1]
        worst = max(worst, abs(float(coeffs @ window)))
        scale = max(scale, float(np.abs(coeffs) @ np.abs(window)))
    return worst, scale


def degree_probe(
    scorer: MlpScorer,
    phi,
    line,
    samples: int = 12,
    interval=(-1.0, 1.0),
    *,
    grid0: int = 512,
    tol: float = 1e-6,
    pattern_tol: float = 1e-9,
) -> list[RegionDegree]:
    """Per activation region on ``w0 + t u``, check that the score has degree <= L alpha^L.

    Regions are delimited by changes of the activation pattern (piece index of
    every hidden pre-activation), located by grid search and bisection. In
    each region ``samples`` equispaced points are taken and the
    (L alpha^L + 1)-th finite differences compared, relative to the size of
    their terms, against ``tol``.
    """
    spec = scorer.spec
    beta = spec.L * spec.alpha**spec.L
    if samples < spec.L + 3:
        raise ProbeError("samples must be >= L + 3")
    w0, u = (np.asarray(v, float) for v in line)
    phi = np.asarray(phi, float)
    lo, hi = map(float, interval)

    def pattern(t):
        return _activation_pattern(scorer.with_params(w0 + t * u), phi)

    def out(t):
        return float(scorer.with_params(w0 + t * u).score_batch(np.atleast_2d(phi))[0])

    ts = np.linspace(lo, hi, grid0)
    pats = [pattern(t) for t in ts]
    cuts = []
    for a, b, pa, pb in zip(ts, ts[1:], pats, pats[1:]):
        if pa == pb:
            continue
        stack = [(a, b, pa, pb)]
        while stack:
            x, y, px, py = stack.pop()
            if y - x < pattern_tol:
                cuts.append((x, y))
                continue
            m = 0.5 * (x + y)
            pm = pattern(m)
            if pm != px:
                stack.append((x, m, px, pm))
            if pm != py:
                stack.append((m, y, pm, py))
    cuts.sort()
    edges = [lo] + [v for c in cuts for v in c] + [hi]
    regions = []
    for a, b in zip(edges[0::2], edges[1::2]):
        margin = 1e-6 * (hi - lo)
        if b - a <= 2 * margin + 1e-12 * (hi - lo):
            regions.append(RegionDegree(a, b, (), None, math.nan, None, "region too short, skipped"))
            continue
        pts = np.linspace(a + margin, b - margin, samples)
        pat = pattern(0.5 * (a + b))
        if any(pattern(t) != pat for t in pts):
            regions.append(RegionDegree(a, b, pat, None, math.nan, None, "pattern not constant on region, skipped"))
            continue
        vals = np.array([out(t) for t in pts])
        ratios = {}
        for order in range(1, samples):
            worst, scale = _finite_difference(vals, order)
            ratios[order] = 0.0 if worst == 0.0 else worst / scale
        est = next((o - 1 for o in range(1, samples) if ratios[o] <= tol), None)
        ratio = ratios.get(beta + 1, math.nan)
        regions.append(RegionDegree(a, b, pat, bool(ratio <= tol), ratio, est))
    return regions
