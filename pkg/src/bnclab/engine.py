"""Greedy sequential decision process and its branch-and-cut instantiation.

``run_process`` executes rounds of typed decisions: for every action type in
the round's slot list it gathers the available actions, scores them, picks
the first maximiser, charges a penalty and applies the transition. Branch and
cut is expressed as such a process with slots ``(node, cut x kappa, branch)``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .cuts import INT_TOL, Cut, generate_candidate_cuts
from .instance import MipInstance
from .lp import LpProblem, LpSolution, solve_lp
from .policy import BRANCH, CUT, NODE, LinearScorer, PolicyBundle, extract_features, select_action

TRACE_SCHEMA = "bnclab.trace/1"
PRUNE_TOL = 1e-9


class ProcessAborted(RuntimeError):
    """A callback failed; the partial trace is attached."""

    def __init__(self, message: str, trace: "RunTrace"):
        self.trace = trace
        super().__init__(message)


class QBoundViolation(AssertionError):
    pass


def _h(*parts) -> str:
    return hashlib.sha1("|".join(map(str, parts)).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# penalties and traces


@dataclass(frozen=True)
class PenaltySpec:
    """Constant per-type penalties; defaults make V the branch-and-cut tree size.

    Only the first cut picked in a round is charged, so one cut round costs
    ``cut`` however many cuts it adds.
    """

    node: float = 0.0
    cut: float = 1.0
    branch: float = 2.0

    def __post_init__(self):
        if min(self.node, self.cut, self.branch) < 0:
            raise ValueError("penalties must be nonnegative")

    def step_penalty(self, k: int, pick: int = 0) -> float:
        if k == NODE:
            return self.node
        if k == CUT:
            return self.cut if pick == 0 else 0.0
        return self.branch

    def __call__(self, k, state, action, i) -> float:
        return self.step_penalty(k, getattr(state, "pick", 0))

    def H(self, M: int) -> float:
        return M * (self.node + self.cut + self.branch)


@dataclass(frozen=True)
class Step:
    round: int
    k: int
    digest: str
    candidates: tuple  # Q keys of every available action
    chosen: Any
    score_hash: str
    penalty: float
    pick: int = 0

    @property
    def n_candidates(self) -> int:
        return len(self.candidates)

    def to_record(self) -> dict:
        return {
            "round": self.round,
            "k": self.k,
            "digest": self.digest,
            "n_candidates": self.n_candidates,
            "chosen": self.chosen,
            "score_hash": self.score_hash,
            "penalty": self.penalty,
            "pick": self.pick,
        }


@dataclass
class RunTrace:
    steps: list = field(default_factory=list)
    V: float = 0.0
    outcome: dict = field(default_factory=dict)
    caps: dict = field(default_factory=dict)
    rounds: int = 0

    @property
    def q_counts(self) -> dict:
        return count_state_action_pairs(self)

    def q_pairs(self) -> dict:
        pairs: dict[int, set] = {}
        for s in self.steps:
            bucket = pairs.setdefault(s.k, set())
            for a in s.candidates:
                bucket.add((s.digest, a))
        return pairs


def count_state_action_pairs(trace: RunTrace, types=(NODE, CUT, BRANCH)) -> dict:
    pairs = trace.q_pairs()
    out = {k: len(pairs.get(k, ())) for k in types}
    for k in pairs:
        out.setdefault(k, len(pairs[k]))
    return out


def tree_size_cost(trace: RunTrace, penalties: PenaltySpec = PenaltySpec()) -> float:
    return float(sum(penalties.step_penalty(s.k, s.pick) for s in trace.steps))


def q_worst_case_int(caps: dict, M: int, k: int) -> int:
    rho_bar = math.prod(caps.values())
    return caps[k] * rho_bar**M


def assert_q_bound(trace: RunTrace, M: int) -> None:
    """Distinct state-action counts never exceed rho_k * prod(rho)^M."""
    if not trace.caps or M < 1:
        return
    for s in trace.steps:
        if s.n_candidates > trace.caps[s.k]:
            raise QBoundViolation(f"{s.n_candidates} type-{s.k} actions exceed cap {trace.caps[s.k]}")
    for k, q in trace.q_counts.items():
        if k in trace.caps and q > q_worst_case_int(trace.caps, M, k):
            raise QBoundViolation(f"Q_{{M,{k}}} = {q} exceeds worst case")


# ---------------------------------------------------------------------------
# the generic process


def run_process(s0, process, M: int, penalties: Callable | None = None):
    """Run the greedy typed-decision loop for at most ``M`` rounds.

    ``process`` supplies ``slots`` (action types per round), ``is_terminal``,
    ``available(s, k)``, ``score(s, k, actions)``, ``transition(s, k, a)``,
    ``digest(s, k, i)`` and ``action_key(k, a)``; optionally ``action_id`` and
    ``on_select(k, index)``. Returns ``(final state, V, trace)``.
    """
    penalties = penalties or getattr(process, "penalty")
    trace = RunTrace(caps=dict(getattr(process, "caps", {}) or {}))
    s, i, V = s0, 0, 0.0
    action_id = getattr(process, "action_id", process.action_key)
    on_select = getattr(process, "on_select", None)
    try:
        while not process.is_terminal(s) and i < M:
            for k in process.slots:
                actions = process.available(s, k)
                if not actions:
                    continue
                scores = np.asarray(process.score(s, k, actions), float)
                idx = select_action(scores)
                a = actions[idx]
                if on_select is not None:
                    on_select(k, idx)
                digest = process.digest(s, k, i)
                p = float(penalties(k, s, a, i))
                trace.steps.append(Step(
                    round=i,
                    k=k,
                    digest=digest,
                    candidates=tuple(process.action_key(k, b) for b in actions),
                    chosen=action_id(k, a),
                    score_hash=hashlib.sha1(scores.tobytes()).hexdigest()[:12],
                    penalty=p,
                    pick=getattr(s, "pick", 0),
                ))
                V += p
                s = process.transition(s, k, a)
                if process.is_terminal(s):
                    break
            i += 1
    except Exception as exc:
        trace.V, trace.rounds = V, i
        raise ProcessAborted(f"process aborted in round {i}: {exc}", trace) from exc
    trace.V, trace.rounds = V, i
    return s, V, trace


# ---------------------------------------------------------------------------
# branch and cut


@dataclass(frozen=True)
class BncConfig:
    M: int = 100
    eps_gap: float = 1e-6
    R: int = 1
    kappa: int = 1
    r: int = 10
    cut_vs_branch: str = "root-rounds"

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.kappa < 0 or self.R < 0 or self.r < 0:
            raise ValueError("R, kappa and r must be nonnegative")
        if self.cut_vs_branch != "root-rounds":
            raise ValueError(f"unknown cut/branch rule {self.cut_vs_branch!r}")


@dataclass
class BncNode:
    id: int
    parent: int | None
    depth: int
    rows: tuple  # extra rows in insertion order
    z_est: float = -math.inf
    cut_rounds: int = 0
    lp_key: str = ""
    digest: str = ""

    def __post_init__(self):
        reprs = [_row_repr(r) for r in self.rows]
        self.lp_key = _h("lp", *reprs)
        self.digest = _h("set", *sorted(reprs))


def _row_repr(row) -> str:
    coeffs, rhs = row
    return ",".join("%.12g" % v for v in coeffs) + "<=" + "%.12g" % rhs


def availability_caps(inst: MipInstance, cfg: BncConfig) -> dict:
    return {NODE: max(cfg.M, 2), CUT: max(cfg.r, 2), BRANCH: max(inst.n, 2)}


class BncState:
    """Mutable search state; also the view object handed to feature extractors."""

    def __init__(self, inst: MipInstance, cfg: BncConfig):
        self.inst = inst
        self.cfg = cfg
        self.c = inst.c
        self.n1 = inst.n1
        self.max_rounds = cfg.M
        self.col_density = (np.count_nonzero(inst.A, axis=0) / inst.m).astype(float)
        root = BncNode(0, None, 0, ())
        self.open: list[BncNode] = [root]
        self.next_id = 1
        self.next_cut_id = 0
        self.ub = math.inf
        self.lb = -math.inf
        self.incumbent: np.ndarray | None = None
        self.z_root: float | None = None
        self.current: BncNode | None = None
        self.sol: LpSolution | None = None
        self.decision: str | None = None
        self.candidates: list[Cut] = []
        self.picked: list[Cut] = []
        self.pick = 0
        self.round = 0
        self.generated_cuts: list[Cut] = []
        self.bounds_history: list[tuple] = []
        self.lp_solves = 0

    @property
    def x_lp(self):
        return self.sol.x

    @property
    def incumbent_value(self):
        return self.ub


class BncProcess:
    """Callbacks that turn ``run_process`` into branch and cut."""

    def __init__(self, inst, policies: PolicyBundle, cfg: BncConfig, penalties: PenaltySpec,
                 lp_cache: dict | None = None, recorder: list | None = None):
        self.inst = inst
        self.policies = policies
        self.cfg = cfg
        self.penalty = penalties
        self.slots = (NODE,) + (CUT,) * cfg.kappa + (BRANCH,)
        self.caps = availability_caps(inst, cfg)
        self.lp_cache = {} if lp_cache is None else lp_cache
        self.recorder = recorder
        self._last_phi = None

    # -- process protocol -------------------------------------------------
    def is_terminal(self, s: BncState) -> bool:
        if s.current is not None:
            return False
        return not s.open or (s.ub - s.lb <= self.cfg.eps_gap)

    def available(self, s: BncState, k: int) -> list:
        if k == NODE:
            return list(s.open) if s.current is None else []
        if s.current is None:
            return []
        if k == CUT:
            if s.decision != "cut" or len(s.picked) >= self.cfg.kappa:
                return []
            chosen = {c.id for c in s.picked}
            return [c for c in s.candidates if c.id not in chosen]
        if s.decision != "branch":
            return []
        x = s.sol.x
        return [j for j in range(self.inst.n1) if abs(x[j] - round(x[j])) > INT_TOL]

    def score(self, s: BncState, k: int, actions: list) -> np.ndarray:
        entry = self.policies[k]
        phi = np.array([extract_features(entry.extractor, s, a) for a in actions], dtype=float)
        self._last_phi = (k, phi) if entry.learnable else None
        return entry.scorer.score_batch(phi)

    def on_select(self, k: int, idx: int) -> None:
        if self.recorder is not None and self._last_phi is not None:
            self.recorder.append((k, self._last_phi[1], idx))

    def digest(self, s: BncState, k: int, i: int) -> str:
        open_part = ",".join(sorted(n.digest for n in s.open))
        cur = s.current.digest if s.current is not None else "-"
        ub = "inf" if math.isinf(s.ub) else "%.9g" % s.ub
        picked = ",".join(_h(*c.key()) for c in s.picked)
        return _h(i, k, open_part, cur, ub, picked)

    def action_key(self, k: int, a) -> str | int:
        if k == NODE:
            return a.digest
        if k == CUT:
            return _h(*a.key())
        return int(a)

    def action_id(self, k: int, a) -> int:
        if k == NODE or k == CUT:
            return int(a.id)
        return int(a)

    def transition(self, s: BncState, k: int, a) -> BncState:
        if k == NODE:
            self._select_node(s, a)
        elif k == CUT:
            self._pick_cut(s, a)
        else:
            self._branch(s, a)
        return s

    # -- transitions ------------------------------------------------------
    def _solve(self, node: BncNode) -> LpSolution:
        sol = self.lp_cache.get(node.lp_key)
        if sol is None:
            sol = solve_lp(LpProblem(self.inst, node.rows))
            self.lp_cache[node.lp_key] = sol
        return sol

    def _cut_pool(self, node: BncNode, sol: LpSolution) -> list[Cut]:
        key = ("cuts", node.lp_key, self.cfg.r)
        pool = self.lp_cache.get(key)
        if pool is None:
            pool = generate_candidate_cuts(sol, self.inst, self.cfg.r)
            self.lp_cache[key] = pool
        return pool

    def _select_node(self, s: BncState, node: BncNode) -> None:
        s.open = [n for n in s.open if n is not node]
        try:
            sol = self._solve(node)
        except Exception as exc:
            raise RuntimeError(f"LP failure at node {node.id}: {exc}") from exc
        s.lp_solves += 1
        s.current, s.sol, s.decision = None, None, None
        if sol.status == "unbounded":
            raise RuntimeError(f"LP relaxation unbounded at node {node.id}")
        if sol.status == "infeasible":
            return
        if node.id == 0 and s.z_root is None:
            s.z_root = sol.value
        if sol.value >= s.ub - PRUNE_TOL:
            return
        x = sol.x
        frac = np.abs(x[: self.inst.n1] - np.round(x[: self.inst.n1])) > INT_TOL
        if not np.any(frac):
            s.ub = sol.value
            inc = np.array(x, dtype=float)
            inc[: self.inst.n1] = np.round(inc[: self.inst.n1])
            s.incumbent = inc
            s.open = [n for n in s.open if n.z_est < s.ub - PRUNE_TOL]
            s.bounds_history.append((s.lb, s.ub))
            return
        s.current, s.sol = node, sol
        s.decision = "branch"
        if node.id == 0 and node.cut_rounds < self.cfg.R and self.cfg.kappa > 0:
            pool = self._cut_pool(node, sol)
            if pool:
                origin = (node.id, s.round)
                s.candidates = [
                    c.with_id(s.next_cut_id + t, origin + c.origin) for t, c in enumerate(pool)
                ]
                s.next_cut_id += len(pool)
                s.generated_cuts.extend(s.candidates)
                s.picked, s.pick = [], 0
                s.decision = "cut"

    def _update_lb(self, s: BncState) -> None:
        if s.open:
            s.lb = max(s.lb, min(n.z_est for n in s.open))
        s.bounds_history.append((s.lb, s.ub))

    def _pick_cut(self, s: BncState, cut: Cut) -> None:
        s.picked.append(cut)
        s.pick = len(s.picked)
        remaining = len(s.candidates) - len(s.picked)
        if len(s.picked) < self.cfg.kappa and remaining > 0:
            return
        node = s.current
        new = BncNode(node.id, node.parent, node.depth, node.rows + tuple(c.as_row() for c in s.picked),
                      z_est=s.sol.value, cut_rounds=node.cut_rounds + 1)
        s.open.append(new)
        s.open.sort(key=lambda n: n.id)
        s.current, s.sol, s.decision = None, None, None
        s.candidates, s.picked, s.pick = [], [], 0
        self._update_lb(s)

    def _branch(self, s: BncState, j: int) -> None:
        node, sol = s.current, s.sol
        v = float(sol.x[j])
        e = [0.0] * self.inst.n
        down = list(e)
        down[j] = 1.0
        up = list(e)
        up[j] = -1.0
        left = BncNode(s.next_id, node.id, node.depth + 1,
                       node.rows + ((tuple(down), float(math.floor(v))),), z_est=sol.value)
        right = BncNode(s.next_id + 1, node.id, node.depth + 1,
                        node.rows + ((tuple(up), -float(math.ceil(v))),), z_est=sol.value)
        s.next_id += 2
        s.open.extend([left, right])
        s.current, s.sol, s.decision = None, None, None
        self._update_lb(s)


class _RoundCounter:
    """Wraps a process so the state knows the current round (used for cut origins)."""

    def __init__(self, inner):
        self.inner = inner

    def __getattr__(self, name):
        return getattr(self.inner, name)

    def digest(self, s, k, i):
        s.round = i
        return self.inner.digest(s, k, i)


@dataclass
class BncResult:
    status: str  # optimal | infeasible | limit
    value: float
    x: np.ndarray | None
    lb: float
    ub: float
    reason: str  # empty | gap | limit
    V: float
    trace: RunTrace
    cuts: list
    lp_solves: int
    bounds_history: list

    @property
    def optimum(self):
        return (self.status, self.value, self.x)


def solve_bnc(
    inst: MipInstance,
    policies: PolicyBundle,
    cfg: BncConfig,
    penalties: PenaltySpec = PenaltySpec(),
    *,
    lp_cache: dict | None = None,
    recorder: list | None = None,
    check_q: bool = True,
) -> BncResult:
    """Branch and cut driven by the bundle's scoring functions.

    Cuts are considered only at the root, for at most ``cfg.R`` rounds; each
    round picks ``min(kappa, pool size)`` cuts one argmax at a time. Every
    other processed node is branched on.
    """
    process = BncProcess(inst, policies, cfg, penalties, lp_cache, recorder)
    state = BncState(inst, cfg)
    s, V, trace = run_process(state, _RoundCounter(process), cfg.M, penalties)
    if s.current is None and not s.open:
        reason = "empty"
    elif s.current is None and s.ub - s.lb <= cfg.eps_gap:
        reason = "gap"
    else:
        reason = "limit"
    if reason == "limit":
        status = "limit"
    elif math.isinf(s.ub):
        status = "infeasible"
    else:
        status = "optimal"
    lb = s.ub if reason == "empty" and not math.isinf(s.ub) else s.lb
    trace.outcome = {
        "status": status,
        "reason": reason,
        "lb": lb,
        "ub": s.ub,
        "x": None if s.incumbent is None else [float(v) for v in s.incumbent],
        "lp_solves": s.lp_solves,
    }
    if check_q:
        assert_q_bound(trace, cfg.M)
    return BncResult(
        status=status,
        value=s.ub,
        x=s.incumbent,
        lb=lb,
        ub=s.ub,
        reason=reason,
        V=V,
        trace=trace,
        cuts=list(s.generated_cuts),
        lp_solves=s.lp_solves,
        bounds_history=list(s.bounds_history),
    )


# ---------------------------------------------------------------------------
# trace export


def _num(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else "-inf"
    return v


def export_trace(trace: RunTrace, meta: dict | None = None) -> str:
    """Line-oriented JSON: a header, one record per step, then the outcome."""
    lines = [json.dumps({"schema": TRACE_SCHEMA, **(meta or {}), "caps": {str(k): v for k, v in sorted(trace.caps.items())}})]
    for s in trace.steps:
        lines.append(json.dumps(s.to_record()))
    outcome = {k: _num(v) for k, v in trace.outcome.items()}
    q = {str(k): v for k, v in sorted(trace.q_counts.items())}
    lines.append(json.dumps({"V": trace.V, "rounds": trace.rounds, "q_counts": q, "outcome": outcome}))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# replaying recorded decisions


@dataclass
class _Decision:
    k: int
    phi: np.ndarray
    children: dict = field(default_factory=dict)


@dataclass
class _Leaf:
    V: float
    status: str
    value: float
    q_counts: dict


class CostEvaluator:
    """``w -> V(I, w)`` for one instance, exact and cheap for repeated queries.

    Every full run records the feature matrices of its parameter-dependent
    decisions. A later query rescores those matrices with the new parameters;
    while the choices agree with a recorded path the final cost is known
    without rerunning the search, because everything else in a run is a
    deterministic function of those choices. Unseen branches trigger a full
    run whose path is then added to the tree.
    """

    def __init__(self, inst: MipInstance, template: PolicyBundle, cfg: BncConfig,
                 penalties: PenaltySpec = PenaltySpec()):
        self.inst = inst
        self.template = template
        self.cfg = cfg
        self.penalties = penalties
        self.lp_cache: dict = {}
        self.root = None
        self.full_runs = 0
        self.queries = 0
        self.q_pairs: dict[int, set] = {}
        self.cuts: list[Cut] = []
        self.results: list[BncResult] = []
        self.keep_results = False

    def _scorers(self, w) -> dict:
        bundle = self.template.with_params(w)
        return {k: bundle[k].scorer for k in bundle.learnable_types}

    def run(self, w) -> BncResult:
        path: list = []
        res = solve_bnc(self.inst, self.template.with_params(w), self.cfg, self.penalties,
                        lp_cache=self.lp_cache, recorder=path)
        self.full_runs += 1
        for k, pairs in res.trace.q_pairs().items():
            self.q_pairs.setdefault(k, set()).update(pairs)
        self.cuts.extend(res.cuts)
        if self.keep_results:
            self.results.append(res)
        self._insert(path, res)
        return res

    def _insert(self, path, res: BncResult) -> None:
        leaf = _Leaf(res.V, res.status, res.value, res.trace.q_counts)
        if not path:
            self.root = leaf
            return
        if self.root is None:
            self.root = _Decision(path[0][0], path[0][1])
        node = self.root
        for depth, (k, phi, idx) in enumerate(path):
            if not isinstance(node, _Decision) or node.k != k or not np.array_equal(node.phi, phi):
                raise RuntimeError("replay tree inconsistent with a fresh run (non-deterministic search?)")
            nxt = node.children.get(idx)
            if depth + 1 == len(path):
                node.children[idx] = leaf
                return
            if nxt is None:
                nk, nphi, _ = path[depth + 1]
                nxt = _Decision(nk, nphi)
                node.children[idx] = nxt
            node = nxt

    def leaf(self, w) -> _Leaf:
        self.queries += 1
        scorers = None
        while True:
            if self.root is None:
                self.run(w)
            node = self.root
            while isinstance(node, _Decision):
                if scorers is None:
                    scorers = self._scorers(w)
                idx = select_action(scorers[node.k].score_batch(node.phi))
                node = node.children.get(idx)
            if node is not None:
                return node
            self.run(w)

    def __call__(self, w) -> float:
        return self.leaf(w).V

    def _decisions(self):
        stack = [self.root] if isinstance(self.root, _Decision) else []
        while stack:
            node = stack.pop()
            yield node
            stack.extend(c for c in node.children.values() if isinstance(c, _Decision))

    def switch_points(self, w0, u, lo: float, hi: float, tol: float, resolution: int = 4096) -> set:
        """Points bracketing every change of an explored decision along ``w0 + t u``.

        Each change of a recorded argmax on [lo, hi] contributes two values of
        t less than ``tol`` apart, one on either side. Linear scores cross at
        closed-form points; other scorers are sampled at ``resolution``
        points per decision and the changes bisected.
        """
        w0, u = np.asarray(w0, float), np.asarray(u, float)
        parts, pos = {}, 0
        for k in self.template.learnable_types:
            size = self.template[k].scorer.n_params
            parts[k] = (self.template[k].scorer, slice(pos, pos + size))
            pos += size
        h = tol / 4
        out: set = set()
        ts = np.linspace(lo, hi, resolution)
        for node in self._decisions():
            scorer, sl = parts[node.k]
            a0, du = w0[sl], u[sl]

            def choice(t):
                return select_action(scorer.score_params((a0 + t * du)[None, :], node.phi)[0])

            if isinstance(scorer, LinearScorer):
                a, b = node.phi @ a0, node.phi @ du
                i, j = np.triu_indices(len(a), 1)
                db = b[i] - b[j]
                ok = db != 0
                cross = (a[j][ok] - a[i][ok]) / db[ok]
                for t in np.unique(cross[(cross > lo) & (cross < hi)]):
                    t = float(t)
                    if choice(t - h) != choice(t + h):
                        out.update((max(lo, t - h), min(hi, t + h)))
                continue
            picks = np.argmax(scorer.score_params(a0 + ts[:, None] * du, node.phi), axis=1)
            for m in np.flatnonzero(picks[1:] != picks[:-1]):
                x, y = float(ts[m]), float(ts[m + 1])
                cx = choice(x)
                while y - x > tol / 2:
                    mid = 0.5 * (x + y)
                    if choice(mid) == cx:
                        x = mid
                    else:
                        y = mid
                out.update((x, y))
        return out

    def q_sums(self) -> dict:
        """Distinct state-action pairs per type over every path explored so far."""
        return {k: len(v) for k, v in sorted(self.q_pairs.items())}
