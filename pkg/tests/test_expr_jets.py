import random

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from varode.expr import (ParseError, Verdict, X, Y, is_zero, normalize, parse_expr, to_text,
                         total_derivative)
from varode.jets import (DegenerateLagrangianError, Lagrangian, OrdODE, divergence_shift,
                         euler_lagrange, euler_lagrange_expression, linearize_along, make_grid,
                         ode_residual, solve_ivp, weighted_degree_check)


# ---------------------------------------------------------------- parser
@pytest.mark.parametrize("text", ["y3^(1/3)", "x*y1 + 2*y0^2", "-y2/y3", "(y1 - x)^3*y4^(-2)", "xi0*y2 - 7/3"])
def test_parse_print_roundtrip(text):
    e = parse_expr(text)
    assert parse_expr(to_text(e)) == e


def test_parse_rational_power_is_exact():
    e = parse_expr("y3^(1/3)")
    assert e == Y(3) ** sp.Rational(1, 3)


@pytest.mark.parametrize("text,offset", [("y3^", 3), ("(y1", 3), ("y1 $ 2", 3), ("w3", 0)])
def test_parse_errors_carry_offset(text, offset):
    with pytest.raises(ParseError) as info:
        parse_expr(text)
    assert info.value.offset == offset


def test_unary_minus_binds_looser_than_power():
    assert parse_expr("-y1^2") == -Y(1) ** 2


# ---------------------------------------------------------------- zero test
def test_is_zero_symbolic_and_numeric():
    y = Y(3)
    assert is_zero((y + 1) ** 2 - y ** 2 - 2 * y - 1) is Verdict.ZERO
    assert is_zero(y ** sp.Rational(1, 3) * y ** sp.Rational(2, 3) - y) is Verdict.ZERO
    assert is_zero(y - Y(2)) is Verdict.NONZERO
    big = sp.expand((Y(1) + Y(2) + Y(3) + 1) ** 9) - sp.expand((Y(1) + Y(2) + Y(3) + 1) ** 9)
    assert is_zero(big) is Verdict.ZERO
    assert is_zero(Y(1) - Y(1), symbolic=False) is Verdict.ZERO
    assert is_zero((Y(1) + 1) ** 2 - Y(1) ** 2 - 2 * Y(1) - 1, symbolic=False) is Verdict.PROBABLY_ZERO


def test_total_derivative_basic():
    assert total_derivative(X * Y(0) ** 2) == Y(0) ** 2 + 2 * X * Y(0) * Y(1)
    assert total_derivative(Y(4)) == Y(5)


# ---------------------------------------------------------------- Euler-Lagrange
def test_el_cube_root_matches_table_equation():
    E = euler_lagrange(Lagrangian(3, Y(3) ** sp.Rational(1, 3)))
    implicit = 9 * Y(3) ** 2 * Y(6) - 45 * Y(3) * Y(4) * Y(5) + 40 * Y(4) ** 3
    assert normalize(implicit.subs(Y(6), E.rhs)) == 0


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_el_of_square_is_trivial(n):
    E = euler_lagrange(Lagrangian(n, Y(n) ** 2))
    assert E.order == 2 * n and E.rhs == 0


def test_el_constant_coefficient_example():
    E = euler_lagrange(Lagrangian(3, Y(3) ** 2 + Y(0) ** 2))
    assert E.rhs == Y(0)


def test_degenerate_lagrangian_rejected():
    with pytest.raises(DegenerateLagrangianError):
        euler_lagrange(Lagrangian(3, X * Y(3)))


def test_lagrangian_order_guard():
    with pytest.raises(ValueError):
        Lagrangian(2, Y(3))


_coef = st.integers(-3, 3)


@st.composite
def potentials(draw):
    """Random polynomial g(x, y0, y1, y2) of low degree."""
    g = sp.Integer(0)
    for _ in range(draw(st.integers(1, 3))):
        mono = sp.Integer(draw(_coef.filter(bool)))
        for _ in range(draw(st.integers(1, 3))):
            mono *= draw(st.sampled_from([X, Y(0), Y(1), Y(2)]))
        g += mono
    return g


@settings(max_examples=20, deadline=None)
@given(potentials())
def test_divergence_invariance(g):
    L = Lagrangian(3, Y(3) ** 4 + Y(1) * Y(3) ** 2 + Y(0) ** 2)
    base = euler_lagrange_expression(L)
    shifted = euler_lagrange_expression(divergence_shift(L, g))
    assert sp.expand(base - shifted) == 0


def test_weighted_degree_bound_holds_for_el():
    rng = random.Random(3)
    from conftest import random_poly_lagrangian

    for _ in range(5):
        L = random_poly_lagrangian(rng)
        rep = weighted_degree_check(euler_lagrange(L), 3)
        assert rep.passed and rep.weighted_degree <= 3


def test_weighted_degree_rejects_non_variational():
    E = OrdODE(6, Y(5) ** 2)
    assert not weighted_degree_check(E, 3).passed


# ---------------------------------------------------------------- integration and linearization
def test_solve_ivp_polynomial_solution():
    E = OrdODE(4, sp.Integer(0))
    grid = make_grid(0, 1, 11)
    tr = solve_ivp(E, [1, 2, 6, 6], grid)
    x = grid
    assert np.allclose(tr.samples[:, 0], 1 + 2 * x + 3 * x ** 2 + x ** 3, atol=1e-10)


def test_solution_satisfies_equation():
    E = euler_lagrange(Lagrangian(3, Y(3) ** 4 + Y(1) * Y(3) ** 2))
    tr = solve_ivp(E, [0.1, 0.2, -0.3, 0.9, 0.4, -0.2], make_grid(0, 0.5, 21))
    assert np.max(np.abs(ode_residual(E, tr, tr.x[2:-2]))) < 1e-5


def test_trajectory_csv_uses_lf():
    tr = solve_ivp(OrdODE(2, -Y(0)), [0, 1], make_grid(0, 1, 5))
    text = tr.to_csv()
    assert "\r" not in text and text.splitlines()[0] == "x,y0,y1"


def test_taylor_and_symbolic_linearization_agree():
    E = euler_lagrange(Lagrangian(3, Y(3) ** 4 + Y(1) * Y(3) ** 2 + Y(2) ** 2 * Y(3)))
    tr = solve_ivp(E, [0.1, 0.2, -0.3, 0.9, 0.4, -0.2], make_grid(0, 0.3, 7))
    a = linearize_along(E, tr, 3, method="taylor").stack
    b = linearize_along(E, tr, 3, method="symbolic").stack
    assert np.max(np.abs(a - b)) < 1e-9 * (1 + np.max(np.abs(b)))
