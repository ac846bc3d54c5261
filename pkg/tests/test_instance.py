import numpy as np
import pytest
from hypothesis import given, strategies as st

from bnclab.instance import (
    InstanceError,
    MipInstance,
    ParseError,
    enumerate_integer_optimum,
    feasible_points,
    generate_instance,
    generate_sample,
    parse_instance,
    serialize_instance,
)
from conftest import binary

FAMILIES = ("knapsack", "packing", "covering")


def test_generate_is_deterministic():
    a = generate_instance("knapsack", 5, 0, 1, (1, 10), 7)
    b = generate_instance("knapsack", 5, 0, 1, (1, 10), 7)
    assert a == b
    assert a.m == 1 and a.n1 == 5 and a.n2 == 0
    assert np.array_equal(a.upper_bounds(), np.ones(5))


def test_packing_serialization_is_byte_stable():
    a = serialize_instance(generate_instance("packing", 3, 0, 2, (1, 5), 1))
    b = serialize_instance(generate_instance("packing", 3, 0, 2, (1, 5), 1))
    assert a == b


def test_knapsack_8_has_optimum():
    inst = generate_instance("knapsack", 8, 0, 3, (1, 20), 42)
    assert enumerate_integer_optimum(inst).status == "optimal"


@pytest.mark.parametrize("args", [(0, 0, 1), (3, 0, 0), (-1, 2, 1)])
def test_invalid_sizes(args):
    n1, n2, m = args
    with pytest.raises(InstanceError):
        generate_instance("knapsack", n1, n2, m, (1, 10), 0)


def test_unknown_family():
    with pytest.raises(InstanceError):
        generate_instance("scheduling", 3, 0, 1, (1, 10), 0)


def test_sample_is_prefix_stable():
    full = generate_sample("packing", 4, 0, 2, (1, 9), 5, 6)
    tail = generate_sample("packing", 4, 0, 2, (1, 9), 5, 3, start=3)
    assert full[3:] == tail
    assert len({serialize_instance(i) for i in full}) == 6


def test_parse_hand_written_knapsack():
    text = "mip hand 1 2 0\nc -3 -2\nrow 2 1 <= 2\nub 1 1\n"
    inst = parse_instance(text)
    assert inst.n1 == 2 and inst.m == 1
    assert np.array_equal(inst.c, [-3, -2])
    assert enumerate_integer_optimum(inst).value == -3


def test_parse_dimension_mismatch():
    text = "mip bad 2 2 0\nc 1 1\nrow 1 1 <= 1\nrow 1 0 <= 1\nrow 0 1 <= 1\n"
    with pytest.raises(InstanceError):
        parse_instance(text)


def test_parse_error_has_line_number():
    with pytest.raises(ParseError) as info:
        parse_instance("mip x 1 2 0\nc 1 one\nrow 1 1 <= 1\n")
    assert info.value.lineno == 2


@given(
    family=st.sampled_from(FAMILIES),
    n1=st.integers(1, 6),
    n2=st.integers(0, 2),
    m=st.integers(1, 4),
    seed=st.integers(0, 2**32),
)
def test_round_trip(family, n1, n2, m, seed):
    inst = generate_instance(family, n1, n2, m, (1, 9), seed)
    again = parse_instance(serialize_instance(inst))
    assert again == inst
    assert serialize_instance(again) == serialize_instance(inst)


def test_enumeration_lexicographic_tie():
    opt = enumerate_integer_optimum(binary("tie", [[1, 1]], [1], [-1, -1]))
    assert opt.status == "optimal" and opt.value == -1
    assert list(opt.x) == [0, 1]


def test_enumeration_infeasible():
    opt = enumerate_integer_optimum(binary("inf", [[1, 0]], [-1], [0, 0]))
    assert opt.status == "infeasible"
    assert opt.x is None


def test_enumeration_zero_objective():
    opt = enumerate_integer_optimum(binary("zero", [[1, 1]], [2], [0, 0]))
    assert opt.value == 0 and list(opt.x) == [0, 0]


def test_enumeration_refuses_unbounded_box():
    inst = MipInstance("open", np.array([[1.0]]), np.array([3.0]), np.array([-1.0]), 1, 0)
    with pytest.raises(InstanceError):
        enumerate_integer_optimum(inst)


@given(seed=st.integers(0, 2**32), family=st.sampled_from(FAMILIES))
def test_optimum_is_feasible_and_minimal(seed, family):
    inst = generate_instance(family, 5, 0, 2, (1, 9), seed)
    opt = enumerate_integer_optimum(inst)
    pts = feasible_points(inst)
    if opt.status == "infeasible":
        assert len(pts) == 0
        return
    assert np.all(inst.A @ opt.x <= inst.b + 1e-9)
    assert opt.value == pytest.approx(min(inst.c @ p for p in pts))
