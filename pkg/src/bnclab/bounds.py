"""Closed-form complexity bounds for learned branch-and-cut policies.

Natural logarithms throughout. Quantities that can overflow a double
(region counts, numbers of output vectors) are carried as logarithms in a
``LogValue`` and only exponentiated when representable. The big-O constants
in the two uniform-convergence forms are fixed to 1 ("up to the suppressed
constant").
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

LOG_MAX = math.log(np.finfo(float).max)
BOUNDS_SCHEMA = "bnclab.bounds/1"
UNIFORM_NOTE = "up to the suppressed constant"


class BoundError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class LogValue:
    """A positive magnitude stored as its natural log."""

    log: float

    @classmethod
    def of(cls, x: float) -> "LogValue":
        if x <= 0:
            raise BoundError("LogValue needs a positive magnitude")
        return cls(math.log(x))

    @property
    def fits(self) -> bool:
        return self.log < LOG_MAX

    @property
    def value(self) -> float | None:
        return math.exp(self.log) if self.fits else None

    def __mul__(self, other: "LogValue") -> "LogValue":
        return LogValue(self.log + other.log)

    def __str__(self) -> str:
        v = self.value
        return f"exp({self.log:.6g})" if v is None else f"{v:.6g}"


@dataclass(frozen=True)
class StructureTriple:
    log_Gamma: float
    gamma: float
    beta: float

    def __post_init__(self):
        if self.log_Gamma < 0 or not math.isfinite(self.log_Gamma):
            raise BoundError("Gamma must be a finite count >= 1")
        if self.gamma < 0 or self.beta < 0:
            raise BoundError("gamma and beta must be nonnegative")

    @classmethod
    def from_counts(cls, Gamma: float, gamma: float, beta: float) -> "StructureTriple":
        return cls(math.log(Gamma), gamma, beta)

    @property
    def Gamma(self) -> LogValue:
        return LogValue(self.log_Gamma)


@dataclass(frozen=True)
class MlpShape:
    L: int
    U: int
    p: int = 2
    alpha: int = 1


@dataclass
class BoundInputs:
    """Per-type caps ``rho``, parameter counts ``W`` and structure triples, plus sample data.

    ``Q`` holds observed sums of distinct state-action pairs per type, ``mu``
    their per-instance means, ``mlp`` optional network shapes per type.
    """

    d: int
    M: int
    rho: list
    W: list
    triples: list
    H: float = 1.0
    N: int = 1
    delta: float = 0.1
    Q: list | None = None
    mu: list | None = None
    mlp: list | None = None

    def __post_init__(self):
        for name in ("rho", "W", "triples"):
            if len(getattr(self, name)) != self.d:
                raise BoundError(f"{name} must have d = {self.d} entries")
        if self.d < 1 or self.M < 0 or self.N < 1:
            raise BoundError("need d >= 1, M >= 0, N >= 1")
        if not 0 < self.delta < 1:
            raise BoundError("delta must lie in (0, 1)")
        if self.H <= 0 or min(self.rho) <= 0 or min(self.W) < 0:
            raise BoundError("H and rho must be positive, W nonnegative")
        for name in ("Q", "mu", "mlp"):
            v = getattr(self, name)
            if v is not None and len(v) != self.d:
                raise BoundError(f"{name} must have d = {self.d} entries")

    @property
    def W_total(self) -> int:
        return sum(self.W)

    @property
    def gamma_tilde(self) -> float:
        return sum(t.gamma for t in self.triples)

    @property
    def log_rho_bar(self) -> float:
        return sum(math.log(r) for r in self.rho)

    @property
    def log_Gamma_bar(self) -> float:
        return sum(t.log_Gamma for t in self.triples)


# ---------------------------------------------------------------------------
# structure and pseudo-dimension


def pdim_upper_bound(t: StructureTriple, W: float) -> float:
    """4 (gamma ln(2 gamma + 1) + W ln(4 e beta + 1) + ln(2 Gamma))."""
    return 4.0 * (
        t.gamma * math.log(2 * t.gamma + 1)
        + W * math.log(4 * math.e * t.beta + 1)
        + math.log(2.0)
        + t.log_Gamma
    )


def cost_structure(inp: BoundInputs) -> StructureTriple:
    """Structure of the cost class given structured scoring classes per type."""
    for k, t in enumerate(inp.triples):
        if t.beta < 1:
            raise BoundError(f"type {k + 1}: the cost-structure result assumes beta_k >= 1")
    W = inp.W_total
    if W < 1:
        raise BoundError("cost structure needs W >= 1")
    gamma = inp.gamma_tilde + W
    s = sum(r * r * t.beta for r, t in zip(inp.rho, inp.triples))
    log_G = (
        inp.d * math.log(2.0)
        + gamma * (inp.M + 1) * inp.log_rho_bar
        + inp.log_Gamma_bar
        + W * math.log(math.e * s / W)
    )
    return StructureTriple(log_G, gamma, 0)


def linear_pdim_bound(inp: BoundInputs) -> float:
    """4 (W ln(3e) + 2 W ln prod rho + (d+1) ln 2 + W (M+1) sum ln rho) for linear scorers."""
    for k, t in enumerate(inp.triples):
        if (t.log_Gamma, t.gamma, t.beta) != (0.0, 0, 1):
            raise BoundError(f"type {k + 1}: linear scorers have structure (1, 0, 1)")
    W, lr = inp.W_total, inp.log_rho_bar
    return 4.0 * (W * math.log(3 * math.e) + 2 * W * lr + (inp.d + 1) * math.log(2.0) + W * (inp.M + 1) * lr)


def linear_triple() -> StructureTriple:
    return StructureTriple(0.0, 0, 1)


def mlp_structure(L: int, W: int, U: int, p: int, alpha: int) -> StructureTriple:
    """(2^L alpha^(L^2 W) (2 e p U / W)^(L W), L W, L alpha^L)."""
    if min(L, W, U, p) < 1 or alpha < 0:
        raise BoundError("need L, W, U, p >= 1 and alpha >= 0")
    if alpha == 0:
        raise BoundError("alpha = 0 makes the region count degenerate")
    log_G = L * math.log(2.0) + L * L * W * math.log(alpha) + L * W * math.log(2 * math.e * p * U / W)
    # a region count is at least 1; when W > 2epU the formula dips below that
    return StructureTriple(max(log_G, 0.0), L * W, L * alpha**L)


def mlp_triples(inp: BoundInputs) -> list[StructureTriple]:
    if inp.mlp is None:
        raise BoundError("inputs carry no network shapes")
    return [mlp_structure(s.L, w, s.U, s.p, s.alpha) for s, w in zip(inp.mlp, inp.W)]


def mlp_pdim_bound(inp: BoundInputs) -> float:
    """Network shapes -> scoring structure -> cost structure -> pseudo-dimension bound."""
    composed = BoundInputs(inp.d, inp.M, list(inp.rho), list(inp.W), mlp_triples(inp), inp.H, inp.N, inp.delta)
    return pdim_upper_bound(cost_structure(composed), inp.W_total)


def relu_pdim_bound(inp: BoundInputs) -> float:
    if inp.mlp is None or any(s.alpha != 1 or s.p != 2 for s in inp.mlp):
        raise BoundError("ReLU specialisation needs alpha = 1 and p = 2 for every type")
    return mlp_pdim_bound(inp)


# ---------------------------------------------------------------------------
# counting


def q_worst_case(rho, M: int, k: int) -> int:
    """rho_k * (prod rho)^M, exact integer; ``k`` is 1-based."""
    rho = [int(r) for r in rho]
    if any(r < 2 for r in rho):
        raise BoundError("the state-action count bound assumes rho_j >= 2 for all j")
    if M < 1:
        raise BoundError("M must be >= 1")
    return rho[k - 1] * math.prod(rho) ** M


def _check_sample(inp: BoundInputs) -> None:
    need = sum(t.gamma for t in inp.triples) + inp.W_total
    if inp.N < need:
        raise BoundError(f"N = {inp.N} < sum(gamma_k + W_k) = {need}")


def r_bound(inp: BoundInputs) -> LogValue:
    """Upper bound on distinct output vectors over N instances, from observed Q sums."""
    if inp.Q is None:
        raise BoundError("r_bound needs observed Q sums")
    _check_sample(inp)
    if min(inp.Q) < 1:
        raise BoundError("Q sums must be >= 1")
    W = inp.W_total
    if W < 1:
        raise BoundError("r_bound needs W >= 1")
    s = sum(q * r * t.beta for q, r, t in zip(inp.Q, inp.rho, inp.triples))
    if s <= 0:
        raise BoundError("sum Q rho beta must be positive")
    log_r = (
        inp.d * math.log(2.0)
        + inp.log_Gamma_bar
        + sum(t.gamma * math.log(q) for q, t in zip(inp.Q, inp.triples))
        + W * math.log(math.e * s / W)
    )
    return LogValue(log_r)


def sign_pattern_bound(N: int, beta: float, W: int) -> LogValue:
    """Sign patterns of N degree-beta polynomials in W variables: 2 (2 e N beta / W)^W, or 1."""
    if beta == 0:
        return LogValue(0.0)
    if W < 1 or N < W:
        raise BoundError("need N >= W >= 1 when beta >= 1")
    return LogValue(math.log(2.0) + W * math.log(2 * math.e * N * beta / W))


# ---------------------------------------------------------------------------
# Rademacher complexity


@dataclass(frozen=True)
class MassartResult:
    estimate: float
    massart_bound: float
    r: int
    mode: str


def massart_estimate(vectors, mode: str = "exact", *, seed: int = 0, draws: int = 10_000) -> MassartResult:
    """E_sigma max_j (1/N) <sigma, x^j> over a finite vector set, with Massart's upper bound."""
    X = np.unique(np.atleast_2d(np.asarray(vectors, float)), axis=0)
    r, N = X.shape
    if mode == "exact":
        if N > 20:
            raise BoundError("exact mode enumerates 2^N sign vectors; N must be <= 20")
        sigma = np.array(list(itertools.product((-1.0, 1.0), repeat=N)))
        est = float(np.mean(np.max(sigma @ X.T, axis=1)) / N)
    elif mode == "monte_carlo":
        rng = np.random.default_rng(seed)
        sigma = rng.choice((-1.0, 1.0), size=(draws, N))
        est = float(np.mean(np.max(sigma @ X.T, axis=1)) / N)
    else:
        raise BoundError(f"unknown mode {mode!r}")
    if r == 1:
        bound = 0.0
    else:
        spread = float(np.max(np.linalg.norm(X - X.mean(axis=0), axis=1)))
        bound = spread * math.sqrt(2 * math.log(r)) / N
    return MassartResult(est, bound, r, mode)


def rademacher_bound_empirical(inp: BoundInputs) -> float:
    """H sqrt((2/N)(d + sum ln Gamma_k + (gamma~ + W) ln sum Q + W ln(e sum rho beta / W)))."""
    if inp.Q is None:
        raise BoundError("empirical bound needs observed Q sums")
    W = inp.W_total
    if inp.N < inp.gamma_tilde + W:
        raise BoundError(f"N = {inp.N} < gamma~ + W = {inp.gamma_tilde + W}")
    total_q = sum(inp.Q)
    if total_q < 1 or W < 1:
        raise BoundError("need sum Q >= 1 and W >= 1")
    s = sum(r * t.beta for r, t in zip(inp.rho, inp.triples))
    inner = (
        inp.d
        + inp.log_Gamma_bar
        + (inp.gamma_tilde + W) * math.log(total_q)
        + W * math.log(math.e * s / W)
    )
    return inp.H * math.sqrt(2.0 / inp.N * inner)


def expected_rademacher_bound(inp: BoundInputs) -> float:
    """ReLU form driven by mean counts mu: H sqrt((2/N)(d + L~ + (Lambda+W) ln(N sum mu) + W ln(e sum rho)))."""
    if inp.mu is None or inp.mlp is None:
        raise BoundError("expected bound needs mean Q values and network shapes")
    if any(s.alpha != 1 or s.p != 2 for s in inp.mlp):
        raise BoundError("expected bound is stated for ReLU networks (alpha = 1, p = 2)")
    W = inp.W_total
    lam = sum(s.L * w for s, w in zip(inp.mlp, inp.W))
    L_tilde = sum(s.L for s in inp.mlp)
    inner = (
        inp.d
        + L_tilde
        + (lam + W) * math.log(inp.N * sum(inp.mu))
        + W * math.log(math.e * sum(inp.rho))
    )
    return inp.H * math.sqrt(2.0 / inp.N * inner)


def uniform_convergence_pdim(H: float, pdim: float, N: int, delta: float) -> float:
    return H * math.sqrt((pdim + math.log(1 / delta)) / N)


def uniform_convergence_rademacher(H: float, rad: float, N: int, delta: float) -> float:
    return rad + H * math.sqrt(math.log(1 / delta) / N)


# ---------------------------------------------------------------------------
# auxiliary inequalities


@dataclass
class FuzzReport:
    draws: int
    seed: int
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _le(lhs, rhs, rel=1e-12) -> bool:
    return lhs <= rhs + rel * max(1.0, abs(lhs), abs(rhs))


def aux_inequality_fuzz(seed: int, draws: int) -> FuzzReport:
    """Checks, on log-uniform draws in [1e-3, 1e3]:

    (1) ln a <= a/b + ln(b/e)
    (2) prod a_k^b_k <= (sum a_k b_k / sum b_k)^(sum b_k)     (compared in logs)
    (3) (e a / b1)^b1 < (e a / b2)^b2 for a >= b2 > b1       (compared in logs)
    """
    if draws < 1:
        raise BoundError("draws must be >= 1")
    rng = np.random.default_rng(seed)
    rep = FuzzReport(draws, seed)
    lo, hi = math.log(1e-3), math.log(1e3)
    for t in range(draws):
        a, b = np.exp(rng.uniform(lo, hi, 2))
        if not _le(math.log(a), a / b + math.log(b / math.e)):
            rep.violations.append({"ineq": 1, "draw": t, "a": a, "b": b})
        d = int(rng.integers(1, 6))
        av, bv = np.exp(rng.uniform(lo, hi, d)), np.exp(rng.uniform(lo, hi, d))
        B = float(bv.sum())
        if not _le(float(bv @ np.log(av)), B * math.log(float(av @ bv) / B)):
            rep.violations.append({"ineq": 2, "draw": t, "a": av.tolist(), "b": bv.tolist()})
        b1, b2, a3 = sorted(np.exp(rng.uniform(lo, hi, 3)))
        if b1 < b2:
            lhs = b1 * (1 + math.log(a3) - math.log(b1))
            rhs = b2 * (1 + math.log(a3) - math.log(b2))
            if not lhs < rhs + 1e-12 * max(1.0, abs(lhs), abs(rhs)):
                rep.violations.append({"ineq": 3, "draw": t, "a": a3, "b1": b1, "b2": b2})
    return rep


# ---------------------------------------------------------------------------
# input files and tables


def inputs_from_dict(data: dict) -> BoundInputs:
    """Bounds input format (JSON)::

        {"schema": "bnclab.bounds/1", "d": 1, "M": 6, "H": 18, "N": 20, "delta": 0.1,
         "types": [{"rho": 10, "W": 4, "structure": "linear"},
                   {"rho": 20, "W": 25, "mlp": {"L": 1, "U": 4}},
                   {"rho": 5, "W": 3, "structure": {"Gamma": 1, "gamma": 0, "beta": 1}}],
         "Q": [40], "mu": [8.0]}

    ``structure`` may be "linear", an explicit triple (``Gamma`` or
    ``log_Gamma``), or omitted when ``mlp`` is given (p = 2, alpha = 1 by default).
    """
    if data.get("schema", BOUNDS_SCHEMA) != BOUNDS_SCHEMA:
        raise BoundError(f"unsupported bounds schema {data.get('schema')!r}")
    types = data["types"]
    rho, W, triples, mlp = [], [], [], []
    for t in types:
        rho.append(t["rho"])
        W.append(int(t["W"]))
        shape = t.get("mlp")
        mlp.append(MlpShape(int(shape["L"]), int(shape["U"]), int(shape.get("p", 2)), int(shape.get("alpha", 1))) if shape else None)
        s = t.get("structure")
        if s == "linear":
            triples.append(linear_triple())
        elif isinstance(s, dict):
            log_g = s["log_Gamma"] if "log_Gamma" in s else math.log(s["Gamma"])
            triples.append(StructureTriple(float(log_g), s["gamma"], s["beta"]))
        elif shape:
            triples.append(mlp_structure(mlp[-1].L, W[-1], mlp[-1].U, mlp[-1].p, mlp[-1].alpha))
        else:
            raise BoundError("each type needs a structure or an mlp shape")
    return BoundInputs(
        d=int(data.get("d", len(types))),
        M=int(data["M"]),
        rho=rho,
        W=W,
        triples=triples,
        H=float(data.get("H", 3 * int(data["M"]))),
        N=int(data.get("N", 1)),
        delta=float(data.get("delta", 0.1)),
        Q=data.get("Q"),
        mu=data.get("mu"),
        mlp=mlp if all(m is not None for m in mlp) else None,
    )


def load_inputs(path) -> BoundInputs:
    with open(path, encoding="utf-8") as fh:
        return inputs_from_dict(json.load(fh))


@dataclass(frozen=True)
class BoundRow:
    name: str
    log_value: float | None
    value: float | None
    note: str = ""


def bound_table(inp: BoundInputs) -> list[BoundRow]:
    """Every bound computable from the inputs; inapplicable ones carry the reason."""
    rows: list[BoundRow] = []

    def add(name, fn, log_space=False):
        try:
            v = fn()
        except BoundError as exc:
            rows.append(BoundRow(name, None, None, f"n/a: {exc}"))
            return None
        if isinstance(v, LogValue):
            rows.append(BoundRow(name, v.log, v.value))
            return v
        if log_space:
            rows.append(BoundRow(name, v, LogValue(v).value))
            return v
        rows.append(BoundRow(name, math.log(v) if v > 0 else None, v))
        return v

    cs = None
    try:
        cs = cost_structure(inp)
    except BoundError:
        pass
    add("cost_structure.Gamma", lambda: cs.log_Gamma if cs else cost_structure(inp), log_space=True)
    add("cost_structure.gamma", lambda: float(cs.gamma) if cs else cost_structure(inp))
    pd = add("pdim_upper_bound(cost)", lambda: pdim_upper_bound(cs, inp.W_total) if cs else cost_structure(inp))
    add("linear_pdim_bound", lambda: linear_pdim_bound(inp))
    add("mlp_pdim_bound", lambda: mlp_pdim_bound(inp))
    for k in range(1, inp.d + 1):
        add(f"q_worst_case[k={k}]", lambda k=k: LogValue(math.log(q_worst_case(inp.rho, inp.M, k))))
    add("r_bound", lambda: r_bound(inp))
    rad = add("rademacher_bound_empirical", lambda: rademacher_bound_empirical(inp))
    add("expected_rademacher_bound", lambda: expected_rademacher_bound(inp))
    add("sign_pattern_bound[N,beta=1,W]", lambda: sign_pattern_bound(inp.N, 1, inp.W_total))
    add(f"uniform_convergence_pdim ({UNIFORM_NOTE})",
        lambda: uniform_convergence_pdim(inp.H, pd, inp.N, inp.delta) if pd is not None else _missing("pdim"))
    add(f"uniform_convergence_rademacher ({UNIFORM_NOTE})",
        lambda: uniform_convergence_rademacher(inp.H, rad, inp.N, inp.delta) if rad is not None else _missing("rademacher"))
    return rows


def _missing(what):
    raise BoundError(f"{what} bound unavailable")


def inputs_to_dict(inp: BoundInputs) -> dict:
    d = asdict(inp)
    d["triples"] = [asdict(t) for t in inp.triples]
    return d
