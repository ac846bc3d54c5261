"""Dense two-phase primal simplex for node relaxations.

Every constraint is a row ``a^T x <= rhs`` with its own slack column, so the
column space of the final tableau is ``[x_0..x_{n-1}, s_0..s_{R-1}]`` where
row order is: instance rows, finite upper-bound rows, extra rows (branching
bounds and cuts) in insertion order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .instance import MipInstance

TOL = 1e-9
EXPOSED_TOL = 1e-7
PIVOT_TOL = 1e-10
BLAND_AFTER = 1000
MAX_PIVOTS = 50_000


class SolverError(RuntimeError):
    def __init__(self, message: str, digest: str):
        self.digest = digest
        super().__init__(f"{message} (problem {digest})")


@dataclass(frozen=True)
class LpProblem:
    base: MipInstance
    extra_rows: tuple = ()  # ((coeffs tuple, rhs), ...)
    var_upper: np.ndarray | None = field(default=None, compare=False)

    def rows(self) -> tuple[np.ndarray, np.ndarray]:
        inst = self.base
        ub = inst.upper_bounds() if self.var_upper is None else np.asarray(self.var_upper, float)
        blocks = [inst.A]
        rhs = [inst.b]
        finite = np.flatnonzero(np.isfinite(ub))
        if len(finite):
            eye = np.zeros((len(finite), inst.n))
            eye[np.arange(len(finite)), finite] = 1.0
            blocks.append(eye)
            rhs.append(ub[finite])
        if self.extra_rows:
            blocks.append(np.array([r[0] for r in self.extra_rows], dtype=float).reshape(-1, inst.n))
            rhs.append(np.array([r[1] for r in self.extra_rows], dtype=float))
        return np.vstack(blocks), np.concatenate(rhs)

    def digest(self) -> str:
        A, b = self.rows()
        h = hashlib.sha1()
        h.update(np.ascontiguousarray(A).tobytes())
        h.update(np.ascontiguousarray(b).tobytes())
        h.update(np.ascontiguousarray(self.base.c).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class LpSolution:
    status: str  # optimal | infeasible | unbounded
    x: np.ndarray | None = None
    value: float = np.nan
    basis: tuple = ()
    tableau: np.ndarray | None = None  # basic rows over all columns, last column = rhs
    row_A: np.ndarray | None = None
    row_b: np.ndarray | None = None
    pivots: int = 0

    @property
    def n(self) -> int:
        return 0 if self.x is None else len(self.x)

    def nonbasic(self) -> list[int]:
        basic = set(self.basis)
        return [j for j in range(self.tableau.shape[1] - 1) if j not in basic]


def _pivot(T: np.ndarray, r: int, j: int) -> None:
    T[r] /= T[r, j]
    col = T[:, j].copy()
    col[r] = 0.0
    nz = np.flatnonzero(np.abs(col) > 0.0)
    if len(nz):
        T[nz] -= np.outer(col[nz], T[r])


def _run_simplex(T, basis, ncols, digest):
    """Minimise the objective stored in the last row of ``T`` (reduced costs, -z in rhs).

    ``digest`` is a zero-argument callable, evaluated only when raising.
    """
    m = T.shape[0] - 1
    degenerate = 0
    pivots = 0
    while True:
        rc = T[-1, :ncols]
        if degenerate >= BLAND_AFTER:
            cand = np.flatnonzero(rc < -TOL)
            if len(cand) == 0:
                return "optimal", pivots
            j = int(cand[0])
        else:
            j = int(np.argmin(rc))
            if rc[j] >= -TOL:
                return "optimal", pivots
        colj = T[:m, j]
        ok = np.flatnonzero(colj > PIVOT_TOL)
        if len(ok) == 0:
            return "unbounded", pivots
        ratios = T[ok, -1] / colj[ok]
        best = ratios.min()
        ties = ok[ratios <= best + 1e-12]
        r = int(min(ties, key=lambda i: basis[i]))
        if abs(T[r, j]) < PIVOT_TOL:
            raise SolverError("pivot below tolerance", digest())
        degenerate = degenerate + 1 if T[r, -1] <= TOL else 0
        _pivot(T, r, j)
        basis[r] = j
        pivots += 1
        if pivots > MAX_PIVOTS:
            raise SolverError("pivot limit exceeded", digest())


def solve_lp(p: LpProblem) -> LpSolution:
    """Solve ``min c^T x, A x <= b, x >= 0`` (plus the problem's extra rows)."""
    A, b = p.rows()
    c = np.asarray(p.base.c, float)
    R, n = A.shape
    negative = np.flatnonzero(b < 0)
    n_art = len(negative)
    ncols = n + R + n_art
    T = np.zeros((R + 1, ncols + 1))
    T[:R, :n] = A
    T[:R, n : n + R] = np.eye(R)
    T[:R, -1] = b
    T[negative, : n + R] *= -1.0
    T[negative, -1] *= -1.0
    basis = [n + i for i in range(R)]
    for a, i in enumerate(negative):
        T[i, n + R + a] = 1.0
        basis[i] = n + R + a
    pivots = 0

    if n_art:
        # phase 1: minimise the sum of artificials
        T[-1, :] = 0.0
        T[-1, n + R : ncols] = 1.0
        T[-1] -= T[negative].sum(axis=0)
        status, k = _run_simplex(T, basis, ncols, p.digest)
        pivots += k
        if -T[-1, -1] > TOL * max(1.0, float(np.abs(b).max())):
            return LpSolution("infeasible", pivots=pivots)
        # drive zero-level artificials out of the basis; drop redundant rows
        keep = []
        for i in range(R):
            if basis[i] >= n + R:
                row = T[i, : n + R]
                cand = np.flatnonzero(np.abs(row) > PIVOT_TOL)
                if len(cand) == 0:
                    continue
                _pivot(T, i, int(cand[0]))
                basis[i] = int(cand[0])
            keep.append(i)
        T = np.vstack([np.hstack([T[keep, : n + R], T[keep, -1:]]), np.zeros((1, n + R + 1))])
        basis = [basis[i] for i in keep]
        ncols = n + R
    else:
        T = np.hstack([T[:, : n + R], T[:, -1:]])
        ncols = n + R

    # phase 2 objective row: reduced costs c - c_B B^-1 A, rhs = -c_B x_B
    cost = np.zeros(ncols + 1)
    cost[:n] = c
    T[-1] = cost
    for i, j in enumerate(basis):
        if cost[j] != 0.0:
            T[-1] -= cost[j] * T[i]
    status, k = _run_simplex(T, basis, ncols, p.digest)
    pivots += k
    if status == "unbounded":
        return LpSolution("unbounded", pivots=pivots)

    values = np.zeros(ncols)
    values[basis] = T[:-1, -1]
    x = values[:n].copy()
    x[np.abs(x) < TOL] = 0.0
    tab = T[:-1].copy()
    tab.setflags(write=False)
    x.setflags(write=False)
    return LpSolution(
        status="optimal",
        x=x,
        value=float(c @ x),
        basis=tuple(int(j) for j in basis),
        tableau=tab,
        row_A=A,
        row_b=b,
        pivots=pivots,
    )


def tableau_row(sol: LpSolution, basic_index: int) -> tuple[np.ndarray, float]:
    """Row of the final dictionary for a basic variable.

    Returns coefficients over all columns (zero on basic columns) and the rhs,
    i.e. ``x_B + sum_{j nonbasic} coeffs[j] x_j = rhs``.
    """
    if sol.status != "optimal":
        raise ValueError(f"tableau rows need an optimal solution (status {sol.status})")
    try:
        r = sol.basis.index(basic_index)
    except ValueError:
        raise ValueError(f"variable {basic_index} is not basic") from None
    row = sol.tableau[r, :-1].copy()
    row[list(sol.basis)] = 0.0
    return row, float(sol.tableau[r, -1])
