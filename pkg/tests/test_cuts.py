import numpy as np
import pytest
from hypothesis import given, strategies as st

from bnclab.cuts import Cut, check_cut_validity, fractionality, generate_candidate_cuts
from bnclab.instance import MipInstance, feasible_points, generate_instance
from bnclab.lp import LpProblem, solve_lp
from conftest import binary


def test_integral_root_gives_no_cuts():
    inst = binary("int", [[1, 1]], [1], [-1, -2])
    sol = solve_lp(LpProblem(inst))
    assert generate_candidate_cuts(sol, inst, 10) == []


def test_cg_cut_on_tiny_knapsack(tiny_knapsack):
    sol = solve_lp(LpProblem(tiny_knapsack))
    cuts = generate_candidate_cuts(sol, tiny_knapsack, 10)
    assert len(cuts) == 1
    cut = cuts[0]
    assert np.allclose(cut.alpha, [1, 1]) and cut.beta == pytest.approx(1)
    assert cut.alpha @ sol.x > cut.beta + 1e-9
    pts = feasible_points(tiny_knapsack)
    assert len(pts) == 3
    assert check_cut_validity(cut, tiny_knapsack)


def test_cap_keeps_most_fractional():
    inst = binary("two", [[2, 0], [0, 4]], [1, 3], [-1, -1])
    sol = solve_lp(LpProblem(inst))
    fr = [fractionality(v) for v in sol.x[:2]]
    assert all(f > 0 for f in fr)
    assert len(generate_candidate_cuts(sol, inst, 10)) == 2
    one = generate_candidate_cuts(sol, inst, 1)
    assert len(one) == 1
    assert one[0].origin[-1] == int(np.argmax(fr))


def test_cut_ids_and_determinism(tiny_knapsack):
    sol = solve_lp(LpProblem(tiny_knapsack))
    a = generate_candidate_cuts(sol, tiny_knapsack, 3, start_id=5)
    b = generate_candidate_cuts(sol, tiny_knapsack, 3, start_id=5)
    assert [c.id for c in a] == [5]
    assert [c.key() for c in a] == [c.key() for c in b]


def test_non_optimal_solution_refused():
    inst = binary("inf", [[1, 1]], [-1], [0, 0])
    with pytest.raises(ValueError):
        generate_candidate_cuts(solve_lp(LpProblem(inst)), inst, 3)


def test_validity_examples(tiny_knapsack):
    assert check_cut_validity(Cut(np.zeros(2), 1.0), tiny_knapsack)
    assert not check_cut_validity(Cut(np.array([1.0, 0.0]), -1.0), tiny_knapsack)


def test_validity_refuses_open_box():
    inst = MipInstance("open", np.array([[1.0]]), np.array([3.0]), np.array([-1.0]), 1, 0)
    with pytest.raises(ValueError):
        check_cut_validity(Cut(np.ones(1), 3.0), inst)


@given(seed=st.integers(0, 2**32), family=st.sampled_from(["knapsack", "packing", "covering"]))
def test_generated_cuts_are_valid_and_violated(seed, family):
    inst = generate_instance(family, 6, 0, 3, (1, 9), seed)
    sol = solve_lp(LpProblem(inst))
    if sol.status != "optimal":
        return
    pts = feasible_points(inst)
    for cut in generate_candidate_cuts(sol, inst, 10):
        assert check_cut_validity(cut, inst, pts)
        assert cut.alpha @ sol.x > cut.beta + 1e-9
