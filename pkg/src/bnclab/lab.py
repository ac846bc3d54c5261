"""Experiment harness: configs, ERM tuning, generalization gaps, verification suites, reports."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import __version__
from .bounds import (
    BoundError,
    BoundInputs,
    MlpShape,
    StructureTriple,
    aux_inequality_fuzz,
    bound_table,
    cost_structure,
    linear_triple,
    massart_estimate,
    mlp_structure,
    pdim_upper_bound,
    r_bound,
    rademacher_bound_empirical,
    uniform_convergence_pdim,
    uniform_convergence_rademacher,
)
from .cuts import Cut, check_cut_validity
from .engine import (
    BncConfig,
    CostEvaluator,
    PenaltySpec,
    ProcessAborted,
    QBoundViolation,
    solve_bnc,
)
from .instance import derive_seed, enumerate_integer_optimum, generate_instance, generate_sample
from .policy import BRANCH, CUT, NODE, default_bundle, make_scorer, scenario_bundle
from .probe import (
    ParamSampler,
    census_output_vectors,
    compare_scans,
    degree_probe,
    scan_slice,
    shatter_search,
)

REPORT_SCHEMA = "bnclab.report/1"
CONFIG_SCHEMA = "bnclab.config/1"
FAULTS = ("corrupt-cut",)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class InstanceSpec:
    family: str = "packing"
    n1: int = 10
    n2: int = 0
    m: int = 4
    coeff: tuple = (1, 9)
    n_train: int = 20
    n_test: int = 20
    seed: int = 2024


@dataclass(frozen=True)
class TunerSpec:
    budget: int = 200
    seed: int = 7
    box: tuple = (-1.0, 1.0)


@dataclass(frozen=True)
class AnalysisSpec:
    slice_instances: int = 4
    slices_per_instance: int = 2
    scan_grid: int = 1024
    bisect_tol: float = 1e-7
    census_instances: int = 5
    census_samples: int = 2000
    census_seed: int = 11
    oracle_instances: int = 60
    oracle_seed: int = 99
    degree_fixtures: int = 10
    aux_draws: int = 10_000
    delta: float = 0.1


@dataclass(frozen=True)
class ExperimentConfig:
    instances: InstanceSpec = InstanceSpec()
    bnc: BncConfig = BncConfig(M=100, R=3, kappa=1, r=10)
    scenario: str = "root-cuts"
    scorer: str = "linear"
    hidden: tuple = (4,)
    tuner: TunerSpec = TunerSpec()
    analysis: AnalysisSpec = AnalysisSpec()
    out_dir: str = "report"

    def validate(self) -> None:
        if self.tuner.budget < 1:
            raise ConfigError("tuner budget must be >= 1")
        lo, hi = self.tuner.box
        if not lo < hi:
            raise ConfigError("parameter box must be nonempty")
        if self.instances.n_train < 1:
            raise ConfigError("the training sample is empty")
        if self.instances.n_test < 0:
            raise ConfigError("n_test must be >= 0")
        if self.scenario not in ("root-cuts", "three-policy"):
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.scorer not in ("linear", "mlp"):
            raise ConfigError(f"unknown scorer {self.scorer!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema"] = CONFIG_SCHEMA
        return d

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha1(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _build(default, data: dict | None):
    cls = type(default)
    merged = asdict(default)
    data = dict(data or {})
    unknown = set(data) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys {sorted(unknown)}")
    merged.update(data)
    for key in ("coeff", "box", "hidden"):
        if key in merged:
            merged[key] = tuple(merged[key])
    return cls(**merged)


def config_from_dict(data: dict) -> ExperimentConfig:
    """Missing keys take the defaults of ``ExperimentConfig()``."""
    data = dict(data)
    schema = data.pop("schema", CONFIG_SCHEMA)
    if schema != CONFIG_SCHEMA:
        raise ConfigError(f"unsupported config schema {schema!r}")
    base = ExperimentConfig()
    try:
        cfg = ExperimentConfig(
            instances=_build(base.instances, data.pop("instances", None)),
            bnc=_build(base.bnc, data.pop("bnc", None)),
            tuner=_build(base.tuner, data.pop("tuner", None)),
            analysis=_build(base.analysis, data.pop("analysis", None)),
            **{k: tuple(v) if k == "hidden" else v for k, v in data.items()},
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# samples and templates


def train_test(cfg: ExperimentConfig):
    s = cfg.instances
    args = (s.family, s.n1, s.n2, s.m, tuple(s.coeff), s.seed)
    train = generate_sample(*args, count=s.n_train)
    test = generate_sample(*args, count=s.n_test, start=s.n_train)
    return train, test


def template(cfg: ExperimentConfig):
    return scenario_bundle(cfg.scenario, cfg.scorer, tuple(cfg.hidden))


def draw_params(cfg: ExperimentConfig, count: int | None = None) -> np.ndarray:
    W = template(cfg).n_params
    lo, hi = cfg.tuner.box
    rng = np.random.default_rng(cfg.tuner.seed)
    return rng.uniform(lo, hi, (count or cfg.tuner.budget, W))


def evaluators(cfg: ExperimentConfig, instances) -> list[CostEvaluator]:
    tmpl = template(cfg)
    return [CostEvaluator(inst, tmpl, cfg.bnc) for inst in instances]


def cost_matrix(evs, ws) -> tuple[np.ndarray, list]:
    """V for every (parameter, instance); aborted runs are NaN and listed."""
    out = np.full((len(ws), len(evs)), np.nan)
    aborted = []
    for a, w in enumerate(ws):
        for i, ev in enumerate(evs):
            try:
                out[a, i] = ev(w)
            except ProcessAborted as exc:
                aborted.append({"w_index": a, "instance": i, "error": str(exc)})
    return out, aborted


def learnable_q(cfg: ExperimentConfig, q_sums: dict) -> list[int]:
    types = (CUT,) if cfg.scenario == "root-cuts" else (NODE, CUT, BRANCH)
    return [max(int(q_sums.get(k, 0)), 1) for k in types]


def scenario_bound_inputs(cfg: ExperimentConfig, N: int, Q=None, mu=None) -> BoundInputs:
    """Bound inputs matching the configured scenario.

    The root-cut scenario is a one-type process with at most kappa * R cut
    picks; the three-policy scenario uses the per-type availability caps
    (open nodes capped by M, candidate pool by r, variables by n).
    """
    b = cfg.bnc
    H = PenaltySpec().H(b.M)
    n = cfg.instances.n1 + cfg.instances.n2
    tmpl = template(cfg)
    if cfg.scenario == "root-cuts":
        types, rho, M = (CUT,), [max(b.r, 2)], max(b.kappa * b.R, 1)
    else:
        types, rho, M = (NODE, CUT, BRANCH), [max(b.M, 2), max(b.r, 2), max(n, 2)], b.M
    W = [tmpl[k].scorer.n_params for k in types]
    if cfg.scorer == "linear":
        triples, mlp = [linear_triple() for _ in types], None
    else:
        specs = [tmpl[k].scorer.spec for k in types]
        mlp = [MlpShape(s.L, s.U, s.p, s.alpha) for s in specs]
        triples = [mlp_structure(s.L, s.W, s.U, s.p, s.alpha) for s in specs]
    return BoundInputs(len(types), M, rho, W, triples, H=H, N=N, delta=cfg.analysis.delta, Q=Q, mu=mu, mlp=mlp)


def pdim_bound(inp: BoundInputs) -> float:
    return pdim_upper_bound(cost_structure(inp), inp.W_total)


# ---------------------------------------------------------------------------
# tuning and gaps


@dataclass
class ErmResult:
    best_index: int
    best_w: np.ndarray
    train_mean: float
    ws: np.ndarray
    train_means: np.ndarray
    aborted: list
    q_sums: dict


def erm_tune(cfg: ExperimentConfig, train=None) -> ErmResult:
    """Random search: the drawn vector with the smallest mean training cost (first drawn on ties)."""
    cfg.validate()
    if train is None:
        train, _ = train_test(cfg)
    evs = evaluators(cfg, train)
    ws = draw_params(cfg)
    V, aborted = cost_matrix(evs, ws)
    means = V.mean(axis=1)
    if np.all(np.isnan(means)):
        raise RuntimeError(f"every run aborted; first failure: {aborted[0] if aborted else 'unknown'}")
    best = int(np.nanargmin(means))
    q: dict[int, int] = {}
    for ev in evs:
        for k, c in ev.q_sums().items():
            q[k] = q.get(k, 0) + c
    return ErmResult(best, ws[best].copy(), float(means[best]), ws, means, aborted, dict(sorted(q.items())))


@dataclass
class GapResult:
    ws: np.ndarray
    train_means: np.ndarray
    test_means: np.ndarray
    gaps: np.ndarray
    sup_gap: float
    pdim: float
    rademacher: float | None
    bound_pdim: float
    bound_rademacher: float | None
    N: int
    q_sums: dict

    @property
    def dominated(self) -> bool:
        ok = self.sup_gap <= self.bound_pdim
        return ok and (self.bound_rademacher is None or self.sup_gap <= self.bound_rademacher)


def measure_gap(cfg: ExperimentConfig, ws=None, train=None, test=None) -> GapResult:
    """Train mean, held-out mean and their gap for every parameter vector.

    The held-out mean is an estimate of the expected cost. Both uniform
    convergence bounds use N = |train|, H = 3M and the observed training Q sums.
    """
    cfg.validate()
    if train is None or test is None:
        tr, te = train_test(cfg)
        train = tr if train is None else train
        test = te if test is None else test
    if ws is None:
        ws = draw_params(cfg)
    tr_evs = evaluators(cfg, train)
    te_evs = tr_evs if test is train else evaluators(cfg, test)
    Vtr, _ = cost_matrix(tr_evs, ws)
    Vte, _ = cost_matrix(te_evs, ws)
    trm, tem = Vtr.mean(axis=1), Vte.mean(axis=1)
    gaps = np.abs(trm - tem)
    q: dict[int, int] = {}
    for ev in tr_evs:
        for k, c in ev.q_sums().items():
            q[k] = q.get(k, 0) + c
    N = len(train)
    inp = scenario_bound_inputs(cfg, N, Q=learnable_q(cfg, q))
    pdim = pdim_bound(inp)
    try:
        rad = rademacher_bound_empirical(inp)
    except BoundError:
        rad = None
    delta = cfg.analysis.delta
    return GapResult(
        ws=np.asarray(ws),
        train_means=trm,
        test_means=tem,
        gaps=gaps,
        sup_gap=float(np.nanmax(gaps)),
        pdim=pdim,
        rademacher=rad,
        bound_pdim=uniform_convergence_pdim(inp.H, pdim, N, delta),
        bound_rademacher=None if rad is None else uniform_convergence_rademacher(inp.H, rad, N, delta),
        N=N,
        q_sums=dict(sorted(q.items())),
    )


# ---------------------------------------------------------------------------
# verification


@dataclass
class SuiteResult:
    name: str
    passed: bool | None  # None: not applicable
    detail: dict = field(default_factory=dict)

    @property
    def status(self) -> str:
        return {True: "pass", False: "FAIL", None: "n/a"}[self.passed]


@dataclass
class VerificationReport:
    suites: list = field(default_factory=list)
    scans: list = field(default_factory=list)
    census: object = None
    gap: GapResult | None = None

    @property
    def ok(self) -> bool:
        return all(s.passed is not False for s in self.suites)

    def __getitem__(self, name) -> SuiteResult:
        return next(s for s in self.suites if s.name == name)


def oracle_instances(count: int, seed: int) -> list:
    """Small binary instances (n1 <= 10, m <= 6) cycling through the families."""
    fams = ("knapsack", "packing", "covering")
    return [
        generate_instance(fams[i % 3], 4 + i % 7, 0, 1 + i % 6, (1, 9), derive_seed(seed, i))
        for i in range(count)
    ]


def _monotone(history, eps) -> bool:
    lbs = [lb for lb, _ in history]
    ubs = [ub for _, ub in history]
    if any(b < a - 1e-9 for a, b in zip(lbs, lbs[1:])):
        return False
    if any(b > a + 1e-9 for a, b in zip(ubs, ubs[1:])):
        return False
    return all(lb <= ub + eps for lb, ub in history if math.isfinite(lb) and math.isfinite(ub))


def oracle_suite(instances, bnc: BncConfig, faults=()) -> tuple[list[SuiteResult], list]:
    mismatches, terminated, limit = [], 0, 0
    q_fail, mono_fail, cuts = [], [], []
    cost_range = []
    for i, inst in enumerate(instances):
        try:
            res = solve_bnc(inst, default_bundle(), bnc)
        except ProcessAborted as exc:
            if isinstance(exc.__cause__, QBoundViolation):
                q_fail.append(i)
                continue
            raise
        except QBoundViolation:
            q_fail.append(i)
            continue
        cuts.extend((i, c) for c in res.cuts)
        if not _monotone(res.bounds_history, bnc.eps_gap):
            mono_fail.append(i)
        if not 0 <= res.V <= PenaltySpec().H(bnc.M):
            cost_range.append(i)
        if res.reason == "limit":
            limit += 1
            continue
        terminated += 1
        opt = enumerate_integer_optimum(inst)
        if opt.status != res.status or (opt.status == "optimal" and abs(opt.value - res.value) > 1e-6):
            mismatches.append({"instance": i, "oracle": opt.value, "bnc": res.value})
    if "corrupt-cut" in faults:
        cuts = [(i, Cut(c.alpha, c.beta - 1.0, c.origin, c.id)) for i, c in cuts]
    invalid = [
        {"instance": i, "cut": c.id} for i, c in cuts if not check_cut_validity(c, instances[i])
    ]
    return [
        SuiteResult("oracle-equivalence", not mismatches and terminated > 0,
                    {"terminated": terminated, "limit": limit, "mismatches": mismatches[:10]}),
        SuiteResult("cut-validity", not invalid,
                    {"cuts": len(cuts), "violations": len(invalid), "first": invalid[:5],
                     "faults": list(faults)}),
        SuiteResult("monotone-bounds", not mono_fail and not cost_range,
                    {"runs": len(instances), "nonmonotone": mono_fail, "cost_out_of_range": cost_range}),
    ], q_fail


def slice_suite(cfg: ExperimentConfig, instances) -> tuple[SuiteResult, list]:
    a = cfg.analysis
    tmpl = template(cfg)
    lo, hi = cfg.tuner.box
    scans, violations, unstable = [], 0, []
    for i, inst in enumerate(instances[: a.slice_instances]):
        ev = [CostEvaluator(inst, tmpl, cfg.bnc)]
        rng = np.random.default_rng(derive_seed(cfg.analysis.census_seed, 1000 + i))
        for s in range(a.slices_per_instance):
            w0 = rng.uniform(lo, hi, tmpl.n_params)
            u = rng.standard_normal(tmpl.n_params)
            u /= np.linalg.norm(u)
            scan = scan_slice(ev, w0, u, (lo - 1.0, hi + 1.0), a.scan_grid, a.bisect_tol, seed=i * 997 + s)
            fine = scan_slice(ev, w0, u, (lo - 1.0, hi + 1.0), 2 * a.scan_grid, a.bisect_tol, seed=i * 997 + s)
            violations += len(scan.violations) + len(fine.violations)
            diff = compare_scans(scan, fine)
            if diff:
                unstable.append({"instance": i, "slice": s, "problems": diff})
            scans.append((i, s, scan))
    detail = {
        "scans": len(scans),
        "violations": violations,
        "unstable": unstable,
        "breakpoints": [len(sc.breakpoints) for _, _, sc in scans],
    }
    return SuiteResult("slice-constancy", violations == 0 and not unstable, detail), scans


def census_suites(cfg: ExperimentConfig, instances) -> tuple[list[SuiteResult], object]:
    a = cfg.analysis
    tmpl = template(cfg)
    evs = [CostEvaluator(inst, tmpl, cfg.bnc) for inst in instances[: a.census_instances]]
    lo, hi = cfg.tuner.box
    census = census_output_vectors(evs, ParamSampler(tmpl.n_params, a.census_samples, a.census_seed, lo, hi))
    N = census.n_instances
    inp = scenario_bound_inputs(cfg, N, Q=learnable_q(cfg, census.q_sums))
    out = []
    try:
        lr = r_bound(inp)
        dom = math.log(census.count) <= lr.log
        out.append(SuiteResult("census-dominance", dom, {"count": census.count, "log_r_bound": lr.log,
                                                          "Q": inp.Q}))
    except BoundError as exc:
        out.append(SuiteResult("census-dominance", None, {"reason": str(exc)}))
    if N <= 12:
        m = massart_estimate(census.values, "exact")
        try:
            rad = rademacher_bound_empirical(inp)
            chain = m.estimate <= m.massart_bound + 1e-9 and m.massart_bound <= rad + 1e-9
            out.append(SuiteResult("rademacher-chain", chain, {"estimate": m.estimate,
                                                               "massart_bound": m.massart_bound,
                                                               "rademacher_bound": rad}))
        except BoundError as exc:
            out.append(SuiteResult("rademacher-chain", None, {"estimate": m.estimate, "reason": str(exc)}))
    else:
        out.append(SuiteResult("rademacher-chain", None, {"reason": "exact estimate needs N <= 12"}))
    sh = shatter_search(census.values, max_subset=min(N, 20))
    pd = pdim_bound(inp)
    out.append(SuiteResult("shatter-sandwich", sh.size <= pd, {"shattered": sh.size, "pdim_bound": pd}))
    return out, census


def degree_fixture(L: int, index: int, seed: int = 0):
    """Seeded ReLU scorer (hidden width 3), input and parameter line."""
    rng = np.random.default_rng(derive_seed(seed, 100 * L + index))
    scorer = make_scorer("mlp", hidden=(3,) * L)
    phi = rng.uniform(-1, 1, scorer.input_dim)
    w0 = rng.standard_normal(scorer.n_params)
    u = rng.standard_normal(scorer.n_params)
    return scorer, phi, (w0, u)


def degree_suite(count: int, seed: int = 0) -> SuiteResult:
    uncertified, regions, worst = [], 0, 0
    for L in (1, 2, 3):
        for j in range(count):
            scorer, phi, line = degree_fixture(L, j, seed)
            for r in degree_probe(scorer, phi, line, samples=L + 6):
                if r.certified is None:
                    continue
                regions += 1
                if r.estimated_degree is not None:
                    worst = max(worst, r.estimated_degree - L)
                if not r.certified:
                    uncertified.append({"L": L, "fixture": j, "estimated_degree": r.estimated_degree})
    return SuiteResult("degree-law", not uncertified, {
        "regions": regions,
        "uncertified": len(uncertified),
        "first": uncertified[:5],
        "max_excess_degree": worst,
    })


def monotonicity_suite(seed: int = 0, draws: int = 200) -> SuiteResult:
    rng = np.random.default_rng(seed)
    bad = []
    for t in range(draws):
        g, be, W = (float(v) for v in rng.integers(0, 20, 3))
        lg = float(rng.uniform(0, 50))
        base = pdim_upper_bound(StructureTriple(lg, g, be), W)
        for bumped in (StructureTriple(lg + 1, g, be), StructureTriple(lg, g + 1, be), StructureTriple(lg, g, be + 1)):
            if pdim_upper_bound(bumped, W) < base:
                bad.append(("pdim", t))
        if pdim_upper_bound(StructureTriple(lg, g, be), W + 1) < base:
            bad.append(("pdim-W", t))
        Q = [int(v) for v in rng.integers(1, 1000, 2)]
        inp = BoundInputs(2, 3, [2, 3], [2, 2], [linear_triple(), linear_triple()], N=10, Q=Q)
        up = BoundInputs(2, 3, [2, 3], [2, 2], [linear_triple(), linear_triple()], N=10, Q=[Q[0] + 1, Q[1]])
        if r_bound(up).log < r_bound(inp).log:
            bad.append(("r_bound", t))
        H, pd, N = float(rng.uniform(1, 100)), float(rng.uniform(0, 500)), int(rng.integers(1, 1000))
        d1, d2 = sorted(rng.uniform(0.01, 0.99, 2))
        if uniform_convergence_pdim(H, pd, N, d1) < uniform_convergence_pdim(H, pd, N, d2):
            bad.append(("eq1", t))
        if uniform_convergence_rademacher(H, pd, N, d1) < uniform_convergence_rademacher(H, pd, N, d2):
            bad.append(("eq2", t))
    return SuiteResult("bound-monotonicity", not bad, {"draws": draws, "violations": bad[:10]})


def run_verification(cfg: ExperimentConfig, faults=(), include_gap: bool = True) -> VerificationReport:
    """Run every verification suite; failures are collected, never raised."""
    cfg.validate()
    unknown = set(faults) - set(FAULTS)
    if unknown:
        raise ConfigError(f"unknown faults {sorted(unknown)}")
    a = cfg.analysis
    if a.oracle_instances < 1:
        raise ConfigError("the oracle instance set is empty")
    train, test = train_test(cfg)
    rep = VerificationReport()
    suites, q_fail = oracle_suite(oracle_instances(a.oracle_instances, a.oracle_seed), cfg.bnc, faults)
    rep.suites.extend(suites)
    try:
        s, rep.scans = slice_suite(cfg, train)
        rep.suites.append(s)
        more, rep.census = census_suites(cfg, train)
        rep.suites.extend(more)
    except ProcessAborted as exc:
        if not isinstance(exc.__cause__, QBoundViolation):
            raise
        q_fail.append("probe")
    rep.suites.append(degree_suite(a.degree_fixtures))
    rep.suites.append(monotonicity_suite())
    fuzz = aux_inequality_fuzz(a.oracle_seed, a.aux_draws)
    rep.suites.append(SuiteResult("aux-inequalities", fuzz.ok, {"draws": fuzz.draws, "violations": fuzz.violations[:5]}))
    if include_gap and cfg.instances.n_test > 0:
        rep.gap = measure_gap(cfg, train=train, test=test)
        g = rep.gap
        rep.suites.append(SuiteResult("gap-dominance", g.dominated, {
            "sup_gap": g.sup_gap, "bound_pdim": g.bound_pdim, "bound_rademacher": g.bound_rademacher,
            "note": "bounds up to the suppressed constant; held-out mean estimates the expectation"}))
    rep.suites.insert(3, SuiteResult("q-bound", not q_fail, {"violations": q_fail}))
    return rep


# ---------------------------------------------------------------------------
# reports


@dataclass
class Report:
    cfg: ExperimentConfig
    erm: ErmResult | None = None
    gap: GapResult | None = None
    verification: VerificationReport | None = None
    bounds: list = field(default_factory=list)


def _f(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def write_csv(path, table: str, header, rows) -> None:
    buf = io.StringIO()
    buf.write(f"# schema: {REPORT_SCHEMA} {table}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_f(v) if not isinstance(v, str) else v for v in r])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def jsonable(x):
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else _f(x)
    return x


def build_report(cfg: ExperimentConfig, *, erm=True, gap=True, verify=True, faults=()) -> Report:
    rep = Report(cfg)
    train, test = train_test(cfg)
    if erm:
        rep.erm = erm_tune(cfg, train)
    if verify:
        rep.verification = run_verification(cfg, faults, include_gap=gap)
        rep.gap = rep.verification.gap
    elif gap and test:
        rep.gap = measure_gap(cfg, train=train, test=test)
    q = rep.gap.q_sums if rep.gap else (rep.erm.q_sums if rep.erm else {})
    inp = scenario_bound_inputs(cfg, len(train), Q=learnable_q(cfg, q) if q else None)
    rep.bounds = bound_table(inp)
    return rep


def emit_report(report: Report, out_dir, figures: bool = False) -> list[str]:
    """Write CSV tables, a JSON summary and a text bound table; returns the file names."""
    os.makedirs(out_dir, exist_ok=True)
    cfg = report.cfg
    written = []

    def path(name):
        written.append(name)
        return os.path.join(out_dir, name)

    src = report.gap or report.erm
    if src is not None:
        W = src.ws.shape[1]
        header = ["w_index", "train_mean", "test_mean", "gap"] + [f"w{j}" for j in range(W)]
        rows = []
        for a, w in enumerate(src.ws):
            if report.gap is not None:
                g = report.gap
                rows.append([a, g.train_means[a], g.test_means[a], g.gaps[a], *w])
            else:
                rows.append([a, report.erm.train_means[a], None, None, *w])
        write_csv(path("costs.csv"), "costs", header, rows)

    ver = report.verification
    if ver is not None:
        write_csv(path("verification.csv"), "verification", ["suite", "status", "detail"],
             [[s.name, s.status, json.dumps(jsonable(s.detail), sort_keys=True)] for s in ver.suites])
        scan_rows = []
        for idx, (inst, sl, scan) in enumerate(ver.scans):
            scan_rows.extend([idx, inst, sl, t, v] for t, v in scan.rows())
        write_csv(path("scans.csv"), "scans", ["scan", "instance", "slice", "t", "V"], scan_rows)
        if ver.census is not None:
            c = ver.census
            write_csv(path("census.csv"), "census", ["vector"] + [f"V{i + 1}" for i in range(c.n_instances)],
                 [[j, *v] for j, v in enumerate(c.vectors)])

    write_csv(path("bounds.csv"), "bounds", ["bound", "log_value", "value", "note"],
         [[b.name, b.log_value, b.value, b.note] for b in report.bounds])
    lines = [f"# schema: {REPORT_SCHEMA} bounds", f"# config {cfg.hash()}", ""]
    width = max((len(b.name) for b in report.bounds), default=10)
    for b in report.bounds:
        if b.log_value is None and b.value is None:
            shown = b.note
        elif b.value is None:
            shown = f"exp({b.log_value:.10g})"
        else:
            shown = f"{b.value:.10g}"
        lines.append(f"{b.name.ljust(width)}  {shown}")
    with open(path("bounds.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

    summary = {
        "schema": REPORT_SCHEMA,
        "provenance": {
            "config_hash": cfg.hash(),
            "code_version": __version__,
            "instance_seed": cfg.instances.seed,
            "tuner_seed": cfg.tuner.seed,
            "census_seed": cfg.analysis.census_seed,
            "oracle_seed": cfg.analysis.oracle_seed,
        },
        "config": cfg.to_dict(),
    }
    if report.erm is not None:
        e = report.erm
        summary["erm"] = {"best_index": e.best_index, "best_w": e.best_w, "train_mean": e.train_mean,
                          "aborted": len(e.aborted), "q_sums": e.q_sums}
    if report.gap is not None:
        g = report.gap
        summary["gap"] = {"sup_gap": g.sup_gap, "pdim": g.pdim, "rademacher": g.rademacher,
                          "bound_pdim": g.bound_pdim, "bound_rademacher": g.bound_rademacher,
                          "N": g.N, "q_sums": g.q_sums,
                          "note": "held-out mean estimates the expectation; bounds up to the suppressed constant"}
    if ver is not None:
        summary["verification"] = {"ok": ver.ok, "suites": {s.name: s.status for s in ver.suites}}
        if ver.census is not None:
            summary["census"] = {"count": ver.census.count, "samples": ver.census.sampler.count,
                                 "q_sums": ver.census.q_sums}
    with open(path("summary.json"), "w", encoding="utf-8") as fh:
        json.dump(jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")

    if figures:
        from .plots import render_figures

        written.extend(render_figures(report, out_dir))
    return written
