import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from volterrajump.expr import Expr, ExprError, MatrixExpr, VectorExpr, as_matrix, as_vector, parse


def test_arithmetic_and_precedence():
    assert Expr("1 + 2 * 3")(np.zeros(1)) == pytest.approx(7.0)
    assert Expr("2 ^ 3 ^ 2")(np.zeros(1)) == pytest.approx(2.0 ** 9)
    assert Expr("-2 ^ 2")(np.zeros(1)) == pytest.approx(-4.0)
    assert Expr("(1 + 2) / 4")(np.zeros(1)) == pytest.approx(0.75)


def test_variables_and_time():
    e = Expr("x1 * x2 + t")
    assert e(np.array([2.0, 3.0]), t=0.5) == pytest.approx(6.5)
    assert e.uses_time
    assert e.state_dim == 2
    assert not Expr("x1").uses_time


def test_functions():
    x = np.array([-4.0])
    assert Expr("abs(x1)")(x) == 4.0
    assert Expr("pos(x1)")(x) == 0.0
    assert Expr("max(x1, 1)")(x) == 1.0
    assert Expr("min(x1, 1)")(x) == -4.0
    assert Expr("sqrt(abs(x1))")(x) == pytest.approx(2.0)
    assert Expr("exp(0) + log(1) + sin(0) + cos(0)")(x) == pytest.approx(2.0)


def test_vectorized_evaluation():
    xs = np.array([[1.0], [2.0], [3.0]])
    np.testing.assert_allclose(Expr("x1 ^ 2")(xs), [1.0, 4.0, 9.0])


def test_constant_detection():
    assert Expr("2 * 3").is_constant
    assert not Expr("2 * x1").is_constant


@pytest.mark.parametrize("src", ["1 +", "foo(1)", "x0", "(1", "1 $ 2", ""])
def test_syntax_errors(src):
    with pytest.raises(ExprError):
        parse(src)


def test_exact_mode_uses_fractions():
    from fractions import Fraction

    v = Expr("x1 / 3")([Fraction(1)], exact=True)
    assert v == Fraction(1, 3)


def test_vector_and_matrix_wrappers():
    v = as_vector(["x1", "1"], 2)
    np.testing.assert_allclose(v(np.array([5.0])), [5.0, 1.0])
    m = as_matrix([["1", "0"], ["0", "x1"]], (2, 2))
    np.testing.assert_allclose(m(np.array([3.0])), [[1.0, 0.0], [0.0, 3.0]])
    assert isinstance(v, VectorExpr) and isinstance(m, MatrixExpr)
    with pytest.raises((ExprError, ValueError)):
        as_vector(["1", "2"], 3)


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_matches_python_arithmetic(a, b):
    x = np.array([a, b])
    got = Expr("x1 * x2 - abs(x1) + max(x1, x2)")(x)
    want = a * b - abs(a) + max(a, b)
    assert math.isclose(float(got), want, rel_tol=1e-12, abs_tol=1e-9)
