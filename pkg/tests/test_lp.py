import numpy as np
import pytest
from hypothesis import given, strategies as st

from bnclab.instance import MipInstance, enumerate_integer_optimum, generate_instance
from bnclab.lp import LpProblem, SolverError, solve_lp, tableau_row


def cont(A, b, c):
    A = np.atleast_2d(np.asarray(A, float))
    return MipInstance("lp", A, np.asarray(b, float), np.asarray(c, float), 0, A.shape[1])


def test_single_vertex():
    sol = solve_lp(LpProblem(cont([[1]], [3], [-1])))
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(3) and sol.value == pytest.approx(-3)


def test_infeasible():
    assert solve_lp(LpProblem(cont([[1]], [-1], [0]))).status == "infeasible"


def test_unbounded():
    assert solve_lp(LpProblem(cont([[0, 1]], [1], [-1, 0]))).status == "unbounded"


def test_tableau_row_of_structural():
    sol = solve_lp(LpProblem(cont([[1]], [3], [-1])))
    row, rhs = tableau_row(sol, 0)
    assert rhs == pytest.approx(3)
    assert row[0] == 0.0


def test_tableau_row_of_slack_is_residual():
    inst = cont([[1, 1], [1, 0]], [4, 1], [-1, -2])
    sol = solve_lp(LpProblem(inst))
    resid = inst.b - inst.A @ sol.x
    for r, j in enumerate(sol.basis):
        if j >= inst.n:
            _, rhs = tableau_row(sol, j)
            assert rhs == pytest.approx(resid[j - inst.n])


def test_tableau_row_errors():
    sol = solve_lp(LpProblem(cont([[1]], [3], [-1])))
    nonbasic = sol.nonbasic()[0]
    with pytest.raises(ValueError):
        tableau_row(sol, nonbasic)
    bad = solve_lp(LpProblem(cont([[1]], [-1], [0])))
    with pytest.raises(ValueError):
        tableau_row(bad, 0)


def test_extra_rows_are_applied():
    inst = cont([[1, 1]], [4], [-1, -1])
    sol = solve_lp(LpProblem(inst, extra_rows=(((1.0, 0.0), 1.0), ((0.0, 1.0), 1.0))))
    assert sol.value == pytest.approx(-2)


def test_degenerate_problem_terminates():
    # classic cycling example under largest-coefficient pricing
    A = [[0.5, -5.5, -2.5, 9], [0.5, -1.5, -0.5, 1], [1, 0, 0, 0]]
    sol = solve_lp(LpProblem(cont(A, [0, 0, 1], [-10, 57, 9, 24])))
    assert sol.status == "optimal"
    assert sol.value == pytest.approx(-1)


def test_solver_error_carries_digest():
    err = SolverError("breakdown", "abc123")
    assert err.digest == "abc123" and "abc123" in str(err)


@given(seed=st.integers(0, 2**32), family=st.sampled_from(["knapsack", "packing", "covering"]))
def test_lp_bounds_mip_and_is_feasible(seed, family):
    inst = generate_instance(family, 5, 1, 3, (1, 9), seed)
    sol = solve_lp(LpProblem(inst))
    if sol.status != "optimal":
        assert sol.status == "infeasible"
        assert enumerate_integer_optimum(inst, grid=4).status == "infeasible"
        return
    A, b = LpProblem(inst).rows()
    scale = 1 + np.abs(A).sum(axis=1) * max(1, np.abs(sol.x).max())
    assert np.all(A @ sol.x - b <= 1e-9 * scale)
    assert np.all(sol.x >= -1e-9)
    opt = enumerate_integer_optimum(inst, grid=4)
    if opt.status == "optimal":
        assert sol.value <= opt.value + 1e-7
