import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gexp.errors import DimensionError, InvalidExponentError, PayoffSyntaxError, UnknownIdentifierError
from gexp.payoff import (
    Binary,
    Const,
    Extremum,
    PayoffExpr,
    Pow,
    Unary,
    Var,
    eval_payoff,
    eval_payoff_batch,
    parse_event,
    parse_payoff,
    to_source,
)

from strategies import nodes, payoffs


def test_min_ast():
    e = parse_payoff("min(x1, 0)")
    assert e.root == Extremum("min", (Var(1), Const(0.0)))
    assert e.arity == 1


def test_two_variable_arity():
    e = parse_payoff("pow(x1,2) + pow(x2,2)")
    assert e.root == Binary("+", Pow(Var(1), 2), Pow(Var(2), 2))
    assert e.arity == 2


def test_bump_value():
    assert eval_payoff(parse_payoff("max(0, 1 - abs(x1))"), [0.25]) == 0.75


@pytest.mark.parametrize("src,x,expected", [
    ("min(x1,0)", -2.0, -2.0),
    ("min(x1,0)", 3.0, 0.0),
    ("pow(x1,2)", 1.5, 2.25),
])
def test_eval_examples(src, x, expected):
    assert eval_payoff(parse_payoff(src), [x]) == expected


@pytest.mark.parametrize("src,xs,expected", [
    ("min(x1,0)", [-1, 0, 1], [-1, 0, 0]),
    ("5", [0.1, 2, -3], [5, 5, 5]),
    ("abs(x1)", [-2, 2], [2, 2]),
])
def test_batch_examples(src, xs, expected):
    np.testing.assert_array_equal(eval_payoff_batch(parse_payoff(src), xs), expected)


def test_precedence():
    e = parse_payoff("1 + 2 * x1 - -3")
    assert e.root == Binary("-", Binary("+", Const(1.0), Binary("*", Const(2.0), Var(1))), Unary("neg", Const(3.0)))
    assert eval_payoff(e, [2.0]) == 8.0
    assert eval_payoff(parse_payoff("-pow(x1, 2)"), [3.0]) == -9.0
    assert eval_payoff(parse_payoff("2 - 3 - 4"), []) == -5.0


def test_whitespace_insensitive():
    assert parse_payoff("max( 0 ,1-abs( x1 ))") == parse_payoff("max(0, 1 - abs(x1))")
    assert parse_payoff("\tmin(x1,\n0)") == parse_payoff("min(x1,0)")


def test_exp_and_numbers():
    assert eval_payoff(parse_payoff("exp(0)"), []) == 1.0
    assert eval_payoff(parse_payoff("1.5e2 + .5"), []) == 150.5


def test_syntax_error_offset_and_expected():
    with pytest.raises(PayoffSyntaxError) as ei:
        parse_payoff("min(x1,")
    assert ei.value.offset == 7
    assert "number" in ei.value.expected and "variable" in ei.value.expected


def test_syntax_error_is_byte_offset():
    # "é" is two bytes in UTF-8
    with pytest.raises(PayoffSyntaxError) as ei:
        parse_payoff("x1 + é")
    assert ei.value.offset == 5
    with pytest.raises(PayoffSyntaxError) as ei:
        parse_payoff("(x1 + 1")
    assert ei.value.offset == 7 and ")" in ei.value.expected


@pytest.mark.parametrize("src", ["", "   ", "x1 +", "x1 x2", "min()", "abs(x1, x2)", "x1 / 2"])
def test_syntax_errors(src):
    with pytest.raises(PayoffSyntaxError):
        parse_payoff(src)


@pytest.mark.parametrize("src,name", [("foo(x1)", "foo"), ("y + 1", "y"), ("x0", "x0"), ("sqrt(x1)", "sqrt")])
def test_unknown_identifier(src, name):
    with pytest.raises(UnknownIdentifierError) as ei:
        parse_payoff(src)
    assert ei.value.name == name


@pytest.mark.parametrize("src", ["pow(x1, -1)", "pow(x1, 0.5)", "pow(x1, x2)"])
def test_bad_exponent(src):
    with pytest.raises(InvalidExponentError):
        parse_payoff(src)


def test_dimension_mismatch():
    e = parse_payoff("x1 + x3")
    assert e.arity == 3
    with pytest.raises(DimensionError):
        eval_payoff(e, [1.0, 2.0])
    with pytest.raises(DimensionError):
        eval_payoff_batch(e, np.zeros((4, 2)))


def test_declared_arity():
    e = parse_payoff("x1", arity=3)
    assert e.arity == 3
    with pytest.raises(DimensionError):
        parse_payoff("x2", arity=1)


def test_events():
    ev = parse_event("x2 < 1")
    assert ev.relation == "<"
    np.testing.assert_array_equal(ev.evaluate_batch([[0, 0.5], [0, 1.0]]), [True, False])
    assert parse_event("abs(x1) ≤ 1").relation == "<="
    with pytest.raises(PayoffSyntaxError):
        parse_event("x1 + 1")


def test_negation_and_scaling_helpers():
    e = parse_payoff("pow(x1, 2)")
    assert eval_payoff(-e, [3.0]) == -9.0
    assert eval_payoff(e.scaled(0.5), [2.0]) == 2.0
    assert eval_payoff(e.shifted(-1.0), [2.0]) == 3.0


@settings(max_examples=300)
@given(nodes(arity=3, allow_exp=True))
def test_round_trip(node):
    expr = PayoffExpr(node)
    again = parse_payoff(to_source(expr))
    assert again == expr


@settings(max_examples=200)
@given(payoffs(arity=2), st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=20))
def test_batch_matches_pointwise(expr, pts):
    batch = eval_payoff_batch(expr, np.array(pts))
    for row, value in zip(pts, batch):
        single = eval_payoff(expr, row)
        assert (single == value) or (np.isnan(single) and np.isnan(value))


@given(st.lists(st.floats(-100, 100), min_size=2, max_size=5), st.randoms())
def test_extremum_permutation_invariant(values, rnd):
    args = tuple(Const(v) if v >= 0 else Unary("neg", Const(-v)) for v in values)
    shuffled = list(args)
    rnd.shuffle(shuffled)
    for op in ("min", "max"):
        a = eval_payoff(PayoffExpr(Extremum(op, args)), [])
        b = eval_payoff(PayoffExpr(Extremum(op, tuple(shuffled))), [])
        assert a == b


@settings(max_examples=100)
@given(payoffs(arity=2), st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)))
def test_finite_on_finite_inputs(expr, pt):
    # no exp, bounded constants: polynomial of bounded degree stays finite
    assert np.isfinite(eval_payoff(expr, pt))
