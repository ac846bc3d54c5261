"""Chvatal-Gomory cuts read off an optimal tableau, plus a brute-force validity check."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .instance import InstanceError, MipInstance, feasible_points
from .lp import LpSolution

INT_TOL = 1e-6
SNAP_TOL = 1e-9
VALIDITY_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class Cut:
    """Inequality ``alpha^T x <= beta`` over the original variables."""

    alpha: np.ndarray
    beta: float
    origin: tuple = ()  # (node id, round, source variable)
    id: int = -1

    def key(self) -> tuple:
        return (tuple(float(a) for a in self.alpha), float(self.beta))

    def with_id(self, cut_id: int, origin: tuple | None = None) -> "Cut":
        return Cut(self.alpha, self.beta, self.origin if origin is None else origin, cut_id)

    def as_row(self) -> tuple:
        return (tuple(float(a) for a in self.alpha), float(self.beta))


def _snap(v):
    r = np.round(v)
    return np.where(np.abs(v - r) < SNAP_TOL, r, v)


def _integral_rows(sol: LpSolution, n1: int) -> np.ndarray:
    """Rows whose slack takes integer values at every integer-feasible point."""
    A, b = sol.row_A, sol.row_b
    int_coef = np.all(np.abs(A - np.round(A)) < SNAP_TOL, axis=1)
    int_rhs = np.abs(b - np.round(b)) < SNAP_TOL
    no_cont = np.all(A[:, n1:] == 0.0, axis=1) if A.shape[1] > n1 else np.ones(len(b), bool)
    return int_coef & int_rhs & no_cont


def fractionality(v: float) -> float:
    f = v - np.floor(v)
    return float(min(f, 1.0 - f))


def generate_candidate_cuts(
    sol: LpSolution,
    inst: MipInstance,
    cap: int,
    start_id: int = 0,
    origin: tuple = (),
) -> list[Cut]:
    """One CG cut per fractional basic integer variable, most fractional first.

    A row only yields a cut when every nonbasic variable with a nonzero entry
    is integer valued (integer structural variable or slack of an all-integer
    row); slack terms are substituted out so the cut lives in x-space.
    """
    if sol.status != "optimal":
        raise ValueError("cut generation needs an optimal LP solution")
    if cap <= 0:
        return []
    n, n1 = inst.n, inst.n1
    tab = sol.tableau
    int_row = _integral_rows(sol, n1)
    sources = []
    for r, j in enumerate(sol.basis):
        if j < n1:
            frac = fractionality(tab[r, -1])
            if frac > INT_TOL:
                sources.append((-frac, j, r))
    sources.sort()

    cuts: list[Cut] = []
    seen = set()
    for _, j, r in sources:
        coef = _snap(tab[r, :-1].copy())
        coef[list(sol.basis)] = 0.0
        rhs = float(tab[r, -1])
        nz = np.flatnonzero(coef != 0.0)
        struct = nz[nz < n]
        slack = nz[nz >= n] - n
        if np.any(struct >= n1) or not np.all(int_row[slack]):
            continue
        fl = np.floor(coef)
        alpha = np.zeros(n)
        alpha[j] = 1.0
        alpha[struct] += fl[struct]
        beta = float(np.floor(rhs))
        for s in slack:
            w = fl[n + s]
            if w != 0.0:
                alpha -= w * sol.row_A[s]
                beta -= w * sol.row_b[s]
        alpha = _snap(alpha)
        beta = float(_snap(np.array(beta)))
        if not np.any(np.abs(alpha) > 1e-12):
            continue
        if float(alpha @ sol.x) - beta <= VALIDITY_TOL:
            continue
        cut = Cut(alpha, beta, origin + (int(j),))
        if cut.key() in seen:
            continue
        seen.add(cut.key())
        cuts.append(cut)
        if len(cuts) >= cap:
            break
    return [c.with_id(start_id + i) for i, c in enumerate(cuts)]


def check_cut_validity(cut: Cut, inst: MipInstance, points: np.ndarray | None = None) -> bool:
    """True iff no feasible integer point of ``inst`` violates the cut."""
    if points is None:
        if inst.n2:
            raise InstanceError("validity check needs a pure-integer instance")
        points = feasible_points(inst)
    if len(points) == 0:
        return True
    return bool(np.all(points @ np.asarray(cut.alpha) <= cut.beta + VALIDITY_TOL))
