"""Expression mini-language: parsing, evaluation, symbolic derivatives."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinn.expr import ExprError, parse_expression, variables_used


def ev(text, dim=1, **env):
    return parse_expression(text, dim=dim).eval(env)


def test_numbers_and_precedence():
    assert ev("2") == 2.0
    assert ev("1 + 2*3") == 7.0
    assert ev("(1 + 2)*3") == 9.0
    assert ev("2 - 3 - 4") == -5.0  # left associative
    assert ev("12/ 4 /3") == 1.0
    assert ev("-2*3") == -6.0
    assert ev("2 - -3") == 5.0


def test_unary_minus_binds_tighter_than_mul():
    # -x^2-style pitfalls don't exist (no power operator), but -a*b == (-a)*b
    assert ev("-2*-3") == 6.0


def test_example_drifts_evaluate():
    assert ev("5*(0.4 - x1)", x1=0.0) == 2.0
    assert ev("5*(0.4 - sin(3*x1))", x1=0.0) == 2.0
    val = ev("5*(0.4 - sin(3*x1))", x1=-0.3)
    assert val == pytest.approx(5 * (0.4 - math.sin(-0.9)), rel=1e-15)


def test_unicode_minus_is_minus():
    assert ev("0.4 − x1", x1=0.1) == pytest.approx(0.3)
    assert ev("−2") == -2.0


def test_functions():
    assert ev("sin(0)") == 0.0
    assert ev("cos(0)") == 1.0
    assert ev("exp(1)") == pytest.approx(math.e, rel=1e-15)
    assert ev("tanh(0.5)") == pytest.approx(math.tanh(0.5), rel=1e-15)
    assert ev("abs(-3)") == 3.0


def test_time_variable_and_dim():
    node = parse_expression("t*x2", dim=2)
    assert node.eval({"t": 2.0, "x1": 9.0, "x2": 1.5}) == 3.0
    assert variables_used(node) == {"t", "x2"}


def test_arrays_broadcast():
    node = parse_expression("5*(0.4 - x1)")
    x = np.array([0.0, 0.4, 1.0])
    np.testing.assert_allclose(node.eval({"x1": x}), 5 * (0.4 - x))


def test_division_by_zero_is_runtime_not_parse():
    node = parse_expression("1/0")
    with pytest.raises(ZeroDivisionError):
        node.eval({})


def test_unknown_identifier_position():
    with pytest.raises(ExprError) as info:
        parse_expression("0.4 - y")
    assert info.value.line == 1
    assert info.value.column == 7


def test_x_out_of_range_for_dim():
    with pytest.raises(ExprError):
        parse_expression("x2", dim=1)
    parse_expression("x2", dim=2)  # fine


def test_unbalanced_parens():
    with pytest.raises(ExprError) as info:
        parse_expression("5*(0.4 - x1")
    assert "(" in str(info.value) or "expected" in str(info.value)


def test_trailing_garbage():
    with pytest.raises(ExprError):
        parse_expression("1 + 2 x1")


def test_empty_input():
    with pytest.raises(ExprError):
        parse_expression("")


def test_function_arity():
    with pytest.raises(ExprError):
        parse_expression("sin()")
    with pytest.raises(ExprError):
        parse_expression("sin(1, 2)")


def test_unknown_function():
    with pytest.raises(ExprError):
        parse_expression("sinh(x1)")


def test_error_column_on_second_line():
    with pytest.raises(ExprError) as info:
        parse_expression("1 +\n  %")
    assert info.value.line == 2
    assert info.value.column == 3


# --- symbolic differentiation -------------------------------------------------


def fd(node, var, env, h=1e-6):
    lo = dict(env, **{var: env[var] - h})
    hi = dict(env, **{var: env[var] + h})
    return (node.eval(hi) - node.eval(lo)) / (2 * h)


@pytest.mark.parametrize(
    "text,env",
    [
        ("5*(0.4 - x1)", {"x1": 0.7}),
        ("5*(0.4 - sin(3*x1))", {"x1": -0.2}),
        ("t*t + x1/(2 + x1)", {"t": 0.3, "x1": 1.1}),
        ("exp(-x1)*cos(2*x1)", {"x1": 0.9}),
        ("tanh(x1*t)", {"t": 0.8, "x1": -1.4}),
    ],
)
def test_diff_matches_finite_differences(text, env):
    node = parse_expression(text, dim=1)
    for var in variables_used(node):
        got = node.diff(var).eval(env)
        want = fd(node, var, env)
        assert got == pytest.approx(want, rel=1e-7, abs=1e-8)


def test_diff_of_abs_uses_sign():
    node = parse_expression("abs(x1)")
    d = node.diff("x1")
    assert d.eval({"x1": 2.5}) == 1.0
    assert d.eval({"x1": -2.5}) == -1.0


def test_diff_wrt_unused_variable_is_zero():
    node = parse_expression("sin(t)", dim=1)
    assert node.diff("x1").eval({"t": 0.3}) == 0.0


# --- property tests (random but reproducible via hypothesis) -------------------

finite = st.floats(min_value=-10, max_value=10, allow_nan=False, allow_infinity=False)


@given(value=finite)
def test_number_literals_round_trip(value):
    text = repr(abs(value))
    assert ev(text) == abs(value)


@st.composite
def expr_trees(draw, depth=0):
    """Random well-formed expression text together with a reference evaluator."""
    if depth >= 3 or draw(st.booleans()):
        which = draw(st.integers(0, 2))
        if which == 0:
            v = draw(st.floats(min_value=0, max_value=9.5, allow_nan=False))
            return f"{v!r}", lambda env, v=v: v
        if which == 1:
            return "t", lambda env: env["t"]
        return "x1", lambda env: env["x1"]
    op = draw(st.sampled_from(["+", "-", "*"]))
    left_t, left_f = draw(expr_trees(depth=depth + 1))
    right_t, right_f = draw(expr_trees(depth=depth + 1))
    if draw(st.booleans()):
        fn = draw(st.sampled_from(["sin", "cos", "tanh"]))
        ref = {"sin": math.sin, "cos": math.cos, "tanh": math.tanh}[fn]
        return (
            f"{fn}(({left_t}) {op} ({right_t}))",
            lambda env, f=ref: f(_apply(op, left_f(env), right_f(env))),
        )
    return f"({left_t}) {op} ({right_t})", lambda env: _apply(op, left_f(env), right_f(env))


def _apply(op, a, b):
    return a + b if op == "+" else a - b if op == "-" else a * b


@settings(max_examples=200, deadline=None)
@given(tree=expr_trees(), t=finite, x=finite)
def test_random_trees_match_reference_semantics(tree, t, x):
    text, ref = tree
    env = {"t": t, "x1": x}
    assert ev(text, **env) == pytest.approx(ref(env), rel=1e-12, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(tree=expr_trees())
def test_parse_is_deterministic(tree):
    text, _ = tree
    assert repr(parse_expression(text)) == repr(parse_expression(text))
