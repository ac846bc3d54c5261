"""MIP instances: representation, seeded generators, text format, brute-force oracle.

Instances are ``min c^T x  s.t.  A x <= b,  x >= 0`` with the first ``n1``
variables integer and the remaining ``n2`` continuous.

Text format (one record per line, ``#`` starts a comment)::

    mip <name> <m> <n1> <n2>
    c <n values>
    row <n coefficients> <= <rhs>      (exactly m lines)
    ub <n values>                      (optional, ``inf`` allowed)
    seed <u64>                         (optional)

Numbers are written with 17 significant digits so that a round trip is exact.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

FAMILIES = ("knapsack", "packing", "covering")
FEAS_TOL = 1e-9
MAX_ENUMERATION = 1 << 22


class InstanceError(ValueError):
    """Invalid instance parameters or inconsistent dimensions."""


class ParseError(InstanceError):
    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class MipInstance:
    name: str
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    n1: int
    n2: int
    var_upper: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "A", _frozen(np.atleast_2d(self.A)))
        object.__setattr__(self, "b", _frozen(self.b))
        object.__setattr__(self, "c", _frozen(self.c))
        if self.var_upper is not None:
            object.__setattr__(self, "var_upper", _frozen(self.var_upper))
        self.validate()

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.n1 + self.n2

    def validate(self) -> None:
        if not self.name or any(ch.isspace() for ch in self.name):
            raise InstanceError(f"instance name must be a non-empty token, got {self.name!r}")
        if self.n1 < 0 or self.n2 < 0 or self.n < 1:
            raise InstanceError(f"need n1, n2 >= 0 and n1 + n2 >= 1 (got {self.n1}, {self.n2})")
        if self.A.ndim != 2 or self.A.shape[0] < 1:
            raise InstanceError("A must have at least one row")
        if self.A.shape[1] != self.n:
            raise InstanceError(f"A has {self.A.shape[1]} columns, expected n = {self.n}")
        if self.b.shape != (self.m,):
            raise InstanceError(f"b has shape {self.b.shape}, expected ({self.m},)")
        if self.c.shape != (self.n,):
            raise InstanceError(f"c has shape {self.c.shape}, expected ({self.n},)")
        if self.var_upper is not None:
            if self.var_upper.shape != (self.n,):
                raise InstanceError(f"ub has shape {self.var_upper.shape}, expected ({self.n},)")
            if np.any(self.var_upper < 0):
                raise InstanceError("upper bounds must be nonnegative")
        for arr, label in ((self.A, "A"), (self.b, "b"), (self.c, "c")):
            if not np.all(np.isfinite(arr)):
                raise InstanceError(f"{label} has non-finite entries")
        if self.seed is not None and not 0 <= self.seed < 2**64:
            raise InstanceError("seed must fit in an unsigned 64-bit integer")

    def upper_bounds(self) -> np.ndarray:
        if self.var_upper is None:
            return np.full(self.n, np.inf)
        return np.asarray(self.var_upper)

    def is_enumerable(self) -> bool:
        return bool(np.all(np.isfinite(self.upper_bounds()[: self.n1])))

    def __eq__(self, other):
        if not isinstance(other, MipInstance):
            return NotImplemented
        same_ub = (self.var_upper is None and other.var_upper is None) or (
            self.var_upper is not None
            and other.var_upper is not None
            and np.array_equal(self.var_upper, other.var_upper)
        )
        return (
            self.name == other.name
            and self.n1 == other.n1
            and self.n2 == other.n2
            and self.seed == other.seed
            and np.array_equal(self.A, other.A)
            and np.array_equal(self.b, other.b)
            and np.array_equal(self.c, other.c)
            and same_ub
        )

    __hash__ = None


@dataclass(frozen=True)
class IntegerOptimum:
    status: str  # "optimal" | "infeasible"
    value: float = math.inf
    x: np.ndarray | None = field(default=None, compare=False)
    exact: bool = True


# ---------------------------------------------------------------------------
# generators


def generate_instance(
    family: str,
    n1: int,
    n2: int,
    m: int,
    coeff_range: tuple[int, int],
    seed: int,
    name: str | None = None,
) -> MipInstance:
    """Draw a random binary-structured instance; a pure function of its arguments.

    All variables get upper bound 1. Knapsack and packing maximise a positive
    profit (stored negated); covering minimises a positive cost over ``A x >= b``.
    """
    if family not in FAMILIES:
        raise InstanceError(f"unknown family {family!r}; expected one of {FAMILIES}")
    if n1 < 0 or n2 < 0 or n1 + n2 < 1:
        raise InstanceError(f"need n1 + n2 >= 1, got n1={n1}, n2={n2}")
    if m < 1:
        raise InstanceError(f"need m >= 1, got {m}")
    lo, hi = int(coeff_range[0]), int(coeff_range[1])
    if lo > hi or lo < 0:
        raise InstanceError(f"coeff_range must be a nonempty nonnegative interval, got {coeff_range}")
    if not 0 <= seed < 2**64:
        raise InstanceError("seed must fit in an unsigned 64-bit integer")

    n = n1 + n2
    rng = np.random.default_rng(seed)
    if family == "knapsack":
        A = rng.integers(lo, hi + 1, size=(m, n)).astype(float)
        b = np.floor(A.sum(axis=1) / 2.0)
        c = -rng.integers(max(lo, 1), hi + 1, size=n).astype(float)
    elif family == "packing":
        mask = rng.random((m, n)) < 0.6
        A = np.where(mask, rng.integers(max(lo, 1), hi + 1, size=(m, n)), 0).astype(float)
        b = np.maximum(A.max(axis=1), np.floor(0.4 * A.sum(axis=1)))
        c = -rng.integers(max(lo, 1), hi + 1, size=n).astype(float)
    else:
        mask = rng.random((m, n)) < 0.6
        cover = np.where(mask, rng.integers(max(lo, 1), hi + 1, size=(m, n)), 0).astype(float)
        # keep every row coverable by the all-ones point
        empty = cover.sum(axis=1) == 0
        cover[empty, 0] = max(lo, 1)
        rhs = np.ceil(0.4 * cover.sum(axis=1))
        A, b = -cover, -rhs
        c = rng.integers(max(lo, 1), hi + 1, size=n).astype(float)
    if name is None:
        name = f"{family}-{n1}-{n2}-{m}-{seed}"
    return MipInstance(name=name, A=A, b=b, c=c, n1=n1, n2=n2, var_upper=np.ones(n), seed=seed)


def derive_seed(base: int, index: int) -> int:
    """Independent 64-bit child seed for the ``index``-th draw of a stream."""
    return int(np.random.SeedSequence([base, index]).generate_state(1, dtype=np.uint64)[0])


def generate_sample(family, n1, n2, m, coeff_range, seed, count, start=0) -> list[MipInstance]:
    return [
        generate_instance(family, n1, n2, m, coeff_range, derive_seed(seed, start + i))
        for i in range(count)
    ]


# ---------------------------------------------------------------------------
# text format


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if v == 0:
        return "0"
    return "%.17g" % v


def serialize_instance(inst: MipInstance) -> str:
    lines = [f"mip {inst.name} {inst.m} {inst.n1} {inst.n2}"]
    lines.append("c " + " ".join(_fmt(v) for v in inst.c))
    for row, rhs in zip(inst.A, inst.b):
        lines.append("row " + " ".join(_fmt(v) for v in row) + " <= " + _fmt(rhs))
    if inst.var_upper is not None:
        lines.append("ub " + " ".join(_fmt(v) for v in inst.var_upper))
    if inst.seed is not None:
        lines.append(f"seed {inst.seed}")
    return "\n".join(lines) + "\n"


def _floats(tokens, lineno):
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise ParseError(str(exc), lineno) from None


def parse_instance(text: str) -> MipInstance:
    header = None
    c = ub = seed = None
    rows, rhs = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        key = tok[0]
        if header is None:
            if key != "mip" or len(tok) != 5:
                raise ParseError("expected header 'mip <name> <m> <n1> <n2>'", lineno)
            try:
                header = (tok[1], int(tok[2]), int(tok[3]), int(tok[4]))
            except ValueError:
                raise ParseError("header sizes must be integers", lineno) from None
            continue
        if key == "c":
            if c is not None:
                raise ParseError("duplicate 'c' line", lineno)
            c = _floats(tok[1:], lineno)
        elif key == "row":
            if len(tok) < 3 or tok[-2] != "<=":
                raise ParseError("row must end with '<= <rhs>'", lineno)
            rows.append(_floats(tok[1:-2], lineno))
            rhs.append(_floats(tok[-1:], lineno)[0])
            n_expected = header[2] + header[3]
            if len(rows[-1]) != n_expected:
                raise InstanceError(
                    f"line {lineno}: row has {len(rows[-1])} coefficients, expected {n_expected}"
                )
        elif key == "ub":
            if ub is not None:
                raise ParseError("duplicate 'ub' line", lineno)
            ub = _floats(tok[1:], lineno)
        elif key == "seed":
            if len(tok) != 2:
                raise ParseError("seed line takes one value", lineno)
            try:
                seed = int(tok[1])
            except ValueError:
                raise ParseError("seed must be an integer", lineno) from None
        else:
            raise ParseError(f"unknown record {key!r}", lineno)
    if header is None:
        raise ParseError("missing header")
    name, m, n1, n2 = header
    if c is None:
        raise ParseError("missing 'c' line")
    if len(rows) != m:
        raise InstanceError(f"header declares m={m} but {len(rows)} rows given")
    return MipInstance(
        name=name,
        A=np.array(rows, dtype=float).reshape(m, n1 + n2),
        b=rhs,
        c=c,
        n1=n1,
        n2=n2,
        var_upper=ub,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# brute-force oracle


def integer_points(inst: MipInstance, grid: int | None = None) -> np.ndarray:
    """All box points in lexicographic order (continuous vars on a uniform grid)."""
    ub = inst.upper_bounds()
    if not inst.is_enumerable():
        raise InstanceError("enumeration box is unbounded: every integer variable needs a finite upper bound")
    axes = [np.arange(0, math.floor(ub[j] + FEAS_TOL) + 1, dtype=float) for j in range(inst.n1)]
    if inst.n2:
        if grid is None or grid < 1:
            raise InstanceError("continuous variables need a grid resolution for enumeration")
        if not np.all(np.isfinite(ub[inst.n1 :])):
            raise InstanceError("continuous variables need finite upper bounds for grid enumeration")
        axes += [np.linspace(0.0, ub[j], grid + 1) for j in range(inst.n1, inst.n)]
    total = math.prod(len(a) for a in axes)
    if total > MAX_ENUMERATION:
        raise InstanceError(f"enumeration box has {total} points (limit {MAX_ENUMERATION})")
    return np.array(list(itertools.product(*axes)), dtype=float).reshape(total, inst.n)


def feasible_points(inst: MipInstance, grid: int | None = None) -> np.ndarray:
    pts = integer_points(inst, grid)
    ok = np.all(pts @ inst.A.T <= inst.b + FEAS_TOL, axis=1)
    return pts[ok]


def enumerate_integer_optimum(inst: MipInstance, grid: int | None = None) -> IntegerOptimum:
    """Exact optimum for pure-integer instances by full enumeration.

    Ties are broken towards the lexicographically smallest point. With
    continuous variables the result is a grid approximation (``exact=False``).
    """
    pts = feasible_points(inst, grid)
    exact = inst.n2 == 0
    if len(pts) == 0:
        return IntegerOptimum("infeasible", math.inf, None, exact)
    vals = pts @ inst.c
    best = vals.min()
    idx = int(np.flatnonzero(vals <= best + FEAS_TOL)[0])
    return IntegerOptimum("optimal", float(vals[idx]), pts[idx].copy(), exact)
