import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tugwar import expr as ex
from tugwar.expr import BinOp, Call, Neg, Num, Var


def test_single_variable():
    assert ex.parse("x") == Var("x")


def test_nested_call_tree():
    tree = ex.parse("max(0, 1 - abs(y - 0.5))")
    want = Call("max", (Num(0.0), BinOp("-", Num(1.0), Call("abs", (BinOp("-", Var("y"), Num(0.5)),)))))
    assert tree == want


def test_power_is_right_associative():
    # the two readings differ, so the value pins the associativity
    left_reading, right_reading = (2**3) ** 2, 2 ** (3**2)
    assert (left_reading, right_reading) == (64, 512)
    assert ex.evaluate(ex.parse("2^3^2"), (0, 0)) == right_reading


@pytest.mark.parametrize(
    "src, value",
    [
        ("-2^2", -4.0),  # ^ binds tighter than unary minus
        ("1 - 2 - 3", -4.0),
        ("8 / 4 / 2", 1.0),
        ("2 * 3 + 4", 10.0),
        ("2 * (3 + 4)", 14.0),
        ("--3", 3.0),
        ("min(3, 1, 2)", 1.0),
        ("max(3, 1, 2)", 3.0),
        ("sqrt(16)", 4.0),
        ("1.5e1", 15.0),
        (".5", 0.5),
    ],
)
def test_precedence_and_literals(src, value):
    assert ex.evaluate(ex.parse(src), (0, 0)) == value


@pytest.mark.parametrize(
    "src, point, value",
    [
        ("x", (0.25, 0.9), 0.25),
        ("abs(x) + abs(y)", (-1, 2), 3.0),
        ("min(x, y) * 4", (0.5, 0.25), 1.0),
    ],
)
def test_eval_examples(src, point, value):
    assert ex.evaluate(ex.parse(src), point) == value


def test_dangling_operator_reports_offset_and_expected():
    with pytest.raises(ex.ParseError) as info:
        ex.parse("x +")
    assert info.value.offset == 3
    assert "'('" in info.value.expected
    assert "x" in info.value.expected


@pytest.mark.parametrize("src", ["", "   ", "z", "x y", "abs(x, y)", "min(x)", "sin(x)", "(x", "x)", "1 +* 2", "x,"])
def test_malformed_inputs(src):
    with pytest.raises(ex.ParseError):
        ex.parse(src)


def test_unknown_identifier_offset():
    with pytest.raises(ex.ParseError) as info:
        ex.parse("x + foo")
    assert info.value.offset == 4


def test_offset_is_in_bytes():
    # 'é' is one character but two UTF-8 bytes; the bad token follows it
    with pytest.raises(ex.ParseError) as info:
        ex.parse("1 + é")
    assert info.value.offset == 4


def test_eval_errors_carry_location():
    with pytest.raises(ex.DivByZero) as info:
        ex.evaluate(ex.parse("1 + x / y"), (1, 0))
    assert info.value.offset == 6
    with pytest.raises(ex.NegativeSqrt):
        ex.evaluate(ex.parse("sqrt(x)"), (-1, 0))
    with pytest.raises(ex.PowDomainError):
        ex.evaluate(ex.parse("x ^ 0.5"), (-1, 0))
    assert isinstance(info.value, ZeroDivisionError)


def test_integral_power_of_negative_base():
    assert ex.evaluate(ex.parse("x^3"), (-2, 0)) == -8.0


def test_vectorized_matches_scalar():
    e = ex.parse("max(x, y) - 2*abs(x - y)^2 / (1 + y)")
    pts = np.random.default_rng(0).uniform(-1, 1, (50, 2))
    many = ex.evaluate_many(e, pts)
    assert np.array_equal(many, [ex.evaluate(e, p) for p in pts])


def test_eval_is_bitwise_deterministic():
    e = ex.parse("sqrt(x*x + y*y) / 3 + 0.1")
    a = ex.evaluate(e, (0.1, 0.7))
    b = ex.evaluate(ex.parse("sqrt(x*x + y*y) / 3 + 0.1"), (0.1, 0.7))
    assert math.copysign(1, a) == math.copysign(1, b) and a.hex() == b.hex()


def test_one_dimensional_points_have_zero_y():
    assert ex.evaluate(ex.parse("x + y"), (0.25,)) == 0.25


# ---------------------------------------------------------------- round trip

_leaf = st.one_of(
    st.floats(min_value=0, max_value=1e6, allow_nan=False, allow_infinity=False).map(Num),
    st.sampled_from(["x", "y"]).map(Var),
)


def _extend(children):
    return st.one_of(
        children.map(Neg),
        st.tuples(st.sampled_from("+-*/^"), children, children).map(lambda t: BinOp(*t)),
        children.map(lambda c: Call("abs", (c,))),
        children.map(lambda c: Call("sqrt", (c,))),
        st.tuples(st.sampled_from(["min", "max"]), st.lists(children, min_size=2, max_size=4)).map(
            lambda t: Call(t[0], tuple(t[1]))
        ),
    )


trees = st.recursive(_leaf, _extend, max_leaves=12)


@given(trees)
@settings(max_examples=300, deadline=None)
def test_print_parse_round_trip(tree):
    text = ex.to_source(tree)
    assert ex.parse(text) == tree
    assert ex.to_source(ex.parse(text)) == text


# ---------------------------------------------------------------- lipschitz


def test_lipschitz_of_x_when_only_x_varies():
    nodes = [(0.0, 0.3), (0.25, 0.3), (0.7, 0.3)]
    assert ex.lipschitz_on(ex.parse("x"), nodes) == 1.0


def test_lipschitz_of_constant():
    assert ex.lipschitz_on(ex.parse("0"), [(0, 0), (1, 1), (0.5, 2)]) == 0.0


def test_lipschitz_tent_on_segment():
    nodes = [(0.0, y) for y in (0, 0.25, 0.5, 0.75, 1.0)]
    vals = [abs(y - 0.5) for _, y in nodes]
    # hand enumeration of all pairs
    oracle = max(abs(vals[i] - vals[j]) / abs(nodes[i][1] - nodes[j][1]) for i, j in itertools.combinations(range(5), 2))
    assert oracle == 1.0
    assert ex.lipschitz_on(ex.parse("abs(y-0.5)"), nodes) == oracle


def test_lipschitz_needs_two_nodes():
    with pytest.raises(ex.TooFewNodes):
        ex.lipschitz_on(ex.parse("x"), [(0, 0)])


point_sets = st.lists(
    st.tuples(st.floats(-2, 2, allow_nan=False), st.floats(-2, 2, allow_nan=False)),
    min_size=3,
    max_size=20,
    unique=True,
)


@given(point_sets, st.randoms(use_true_random=False))
@settings(max_examples=100, deadline=None)
def test_lipschitz_permutation_invariant(pts, rnd):
    e = ex.parse("x*y + abs(x - 0.3)")
    shuffled = list(pts)
    rnd.shuffle(shuffled)
    assert ex.lipschitz_on(e, pts) == ex.lipschitz_on(e, shuffled)


@given(point_sets, st.data())
@settings(max_examples=100, deadline=None)
def test_lipschitz_monotone_under_subsets(pts, data):
    e = ex.parse("max(x, y^2) - 0.5*y")
    k = data.draw(st.integers(2, len(pts)))
    assert ex.lipschitz_on(e, pts[:k]) <= ex.lipschitz_on(e, pts)


def test_x_lipschitz_at_most_one():
    pts = np.random.default_rng(1).uniform(0, 1, (40, 2))
    assert ex.lipschitz_on(ex.parse("x"), pts) <= 1.0
