import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from timeless.errors import InputError, NumericError, TimelessError
from timeless.expr import EvaluationError, ExpressionSyntaxError, compile_potential, parse_expression


def ev(src, **env):
    return parse_expression(src).evaluate(env)


def test_examples():
    assert ev("q1^2 + 1", q1=2.0) == 5.0
    assert ev("-q1^2", q1=2.0) == -4.0
    assert ev("(q1^2-1)^2", q1=1.2) == pytest.approx(0.1936, abs=1e-14)


def test_power_is_right_associative():
    assert ev("2^3^2") == 512.0
    assert ev("(2^3)^2") == 64.0


def test_precedence_of_products_and_sums():
    assert ev("1 + 2 * 3 - 4 / 2") == 5.0
    assert ev("-2 * 3") == -6.0
    assert ev("2 * -3") == -6.0


def test_functions():
    assert ev("sin(q1)^2 + cos(q1)^2", q1=0.7) == pytest.approx(1.0, abs=1e-15)
    assert ev("exp(0)") == 1.0
    assert ev("sqrt(9)") == 3.0


def test_syntax_error_carries_line_and_column():
    with pytest.raises(ExpressionSyntaxError) as e:
        parse_expression("q1 +\n  * 2")
    assert (e.value.line, e.value.column) == (2, 3)
    assert "2:3" in str(e.value)


def test_unknown_identifier():
    with pytest.raises(ExpressionSyntaxError, match="unknown identifier 'x'"):
        parse_expression("x + 1")
    with pytest.raises(ExpressionSyntaxError, match="unknown identifier 'q3'"):
        parse_expression("q3", variables=["q1", "q2"])


@pytest.mark.parametrize("src", ["", "(", "q1 +", "1 2", "sin q1", "q1 ** 2", "sin(", "2^", ")"])
def test_malformed_inputs_raise_structured_errors(src):
    with pytest.raises(InputError):
        parse_expression(src)


def test_domain_errors_carry_spans():
    with pytest.raises(EvaluationError) as e:
        ev("1 / (q1 - 1)", q1=1.0)
    assert isinstance(e.value, NumericError)
    assert e.value.span == (0, 12)
    with pytest.raises(EvaluationError, match="span 0..10"):
        ev("sqrt(q1-3)", q1=1.0)


def test_compiled_potential_matches_interpreter():
    V = compile_potential("(q1^2-1)^2 + q2^2/2", 2)
    q = np.array([[1.2, 0.5], [0.0, 0.0], [-2.0, 1.0]])
    want = [parse_expression("(q1^2-1)^2 + q2^2/2").evaluate({"q1": a, "q2": b}) for a, b in q]
    assert np.allclose(V(q), want, rtol=0, atol=1e-14)


def test_compiled_potential_still_reports_domain_errors():
    V = compile_potential("1/q1", 1)
    with pytest.raises(EvaluationError):
        V(np.array([[0.0]]))


def test_derivative():
    d = parse_expression("q1^3 + sin(q1) * q2").derivative("q1")
    assert d.evaluate({"q1": 2.0, "q2": 3.0}) == pytest.approx(12 + 3 * math.cos(2.0), abs=1e-14)


_atoms = st.one_of(st.sampled_from(["q1", "q2", "p1"]),
                   st.floats(0, 100, allow_nan=False).map(lambda x: repr(round(x, 3))))


def _expr(children):
    return st.one_of(
        st.tuples(children, st.sampled_from(["+", "-", "*", "/", "^"]), children).map(lambda t: f"({t[0]}{t[1]}{t[2]})"),
        children.map(lambda c: f"-{c}"),
        st.tuples(st.sampled_from(["sin", "cos", "exp", "sqrt"]), children).map(lambda t: f"{t[0]}({t[1]})"),
    )


exprs = st.recursive(_atoms, _expr, max_leaves=12)


@settings(max_examples=200, deadline=None)
@given(exprs)
def test_pretty_print_round_trip(src):
    ast = parse_expression(src)
    again = parse_expression(ast.pretty())
    assert again == ast
    assert again.pretty() == ast.pretty()


@settings(max_examples=300, deadline=None)
@given(st.text(alphabet="q1p2+-*/^() .e3sinqrtxcop\n", max_size=20))
def test_fuzzed_text_never_crashes(src):
    try:
        ast = parse_expression(src)
    except InputError:
        return
    try:
        ast.evaluate({"q1": 0.3, "q2": -1.1, "p1": 2.0, "p2": 0.5})
    except TimelessError:
        pass
