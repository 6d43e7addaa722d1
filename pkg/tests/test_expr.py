import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmdp.expr import ExprError, MultilinearExpr, UndeclaredParameter, parse_expr, to_fraction

PARAMS = ("p", "q", "r")

fracs = st.fractions(min_value=-5, max_value=5, max_denominator=20)
monos = st.lists(st.sampled_from([0, 1, 2]), max_size=3, unique=True)
exprs = st.lists(st.tuples(fracs, monos), max_size=5).map(MultilinearExpr)
points = st.tuples(*[st.fractions(min_value=0, max_value=1, max_denominator=50)] * 3)


def test_to_fraction_decimal_and_ratio():
    assert to_fraction("1/2") == Fraction(1, 2)
    assert to_fraction("0.1") == Fraction(1, 10)
    assert to_fraction(0.1) == Fraction(1, 10)
    with pytest.raises(ExprError):
        to_fraction("abc")


def test_parse_and_print():
    e = parse_expr("1 - p*q + 2*r/4", PARAMS)
    assert e.evaluate_exact((Fraction(1, 2), Fraction(1, 3), 1)) == Fraction(4, 3)
    assert parse_expr(e.to_string(PARAMS), PARAMS) == e
    assert parse_expr("(1-p)*(1-q)", PARAMS) == parse_expr("1 - p - q + p*q", PARAMS)


@pytest.mark.parametrize("text", ["p*p", "p*(p+q)"])
def test_squares_rejected(text):
    with pytest.raises(ExprError):
        parse_expr(text, PARAMS)


def test_undeclared_and_syntax():
    with pytest.raises(UndeclaredParameter):
        parse_expr("z + 1", PARAMS)
    with pytest.raises(ExprError):
        parse_expr("1 +", PARAMS)
    with pytest.raises(ExprError):
        parse_expr("p / q", PARAMS)


def test_constant_queries():
    assert MultilinearExpr().is_zero()
    assert MultilinearExpr.const(3).constant_value() == 3
    with pytest.raises(ExprError):
        MultilinearExpr.param(0).constant_value()


@given(exprs, exprs, points)
def test_ring_operations_match_exact_evaluation(a, b, x):
    assert (a + b).evaluate_exact(x) == a.evaluate_exact(x) + b.evaluate_exact(x)
    assert (a - b).evaluate_exact(x) == a.evaluate_exact(x) - b.evaluate_exact(x)
    if not (a.params & b.params):
        assert (a * b).evaluate_exact(x) == a.evaluate_exact(x) * b.evaluate_exact(x)


@given(exprs, points)
def test_substitute_agrees_with_evaluation(e, x):
    part = e.substitute({0: x[0]})
    assert 0 not in part.params
    assert part.evaluate_exact(x) == e.evaluate_exact(x)


@settings(max_examples=60)
@given(exprs, st.tuples(*[st.floats(0.05, 0.5)] * 3), st.tuples(*[st.floats(0.5, 0.95)] * 3))
def test_bounds_enclose_grid_samples(e, lo, hi):
    blo, bhi = e.bounds(lo, hi)
    grid = [np.linspace(a, b, 5) for a, b in zip(lo, hi)]
    for pt in itertools.product(*grid):
        v = e.evaluate(pt)
        assert blo - 1e-12 <= v <= bhi + 1e-12
    # multilinear: the extremes sit on box corners
    corners = [e.evaluate(c) for c in itertools.product(*zip(lo, hi))]
    assert blo == pytest.approx(min(corners)) and bhi == pytest.approx(max(corners))
