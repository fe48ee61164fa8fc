import random

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from varode.classifier import random_solutions
from varode.expr import Verdict, X, Y, compile_exprs
from varode.jets import Lagrangian, LinearODECoeffs, OrdODE, euler_lagrange, linearize_along, make_grid
from varode.wilczynski import (CanonicalFormError, canonicalize, flatness_test, fundamental_system,
                               generalized_wilczynski_order6, generalized_wilczynski_order8,
                               invariant_status, invariants_along, odd_invariants_vanish,
                               osculating_flag, selfdual_test, wilczynski_invariants)

t, s = sp.symbols("t s", real=True)


def reparametrized(p, psi):
    """Coefficients of the equation for u(s) = e(psi(s)), given e^(N+1) = sum p_i e^(i).

    Built independently of the package by the chain rule on formal derivative symbols.
    """
    N = len(p) - 1
    E = sp.symbols(f"E0:{N + 2}")
    dpsi = sp.diff(psi, s)

    def D(expr):
        out = sp.diff(expr, s)
        for j in range(N + 1):
            out += sp.diff(expr, E[j]) * dpsi * E[j + 1]
        return out

    rows = [E[0]]
    for _ in range(N + 1):
        rows.append(sp.expand(D(rows[-1])))
    top = {E[N + 1]: sum(pi.subs(t, psi) * E[i] for i, pi in enumerate(p))}
    rows = [sp.expand(r.subs(top)) for r in rows]
    M = sp.Matrix([[r.coeff(E[j]) for j in range(N + 1)] for r in rows[:-1]])
    rhs = sp.Matrix([rows[-1].coeff(E[j]) for j in range(N + 1)])
    return [sp.cancel(v) for v in M.T.LUsolve(rhs)]


coef = st.integers(-3, 3)


@settings(max_examples=6, deadline=None)
@given(st.lists(st.tuples(coef, coef), min_size=4, max_size=4), st.integers(1, 4), st.integers(-3, 3))
def test_weight_law_under_reparametrization(cs, a, b):
    N = 3
    p = [sp.Rational(c0, 2) + sp.Rational(c1, 3) * t for c0, c1 in cs]
    psi = s + sp.Rational(a, 10) * s ** 2 + sp.Rational(b, 20) * s ** 3
    q = reparametrized(p, psi)
    sg = np.linspace(0.05, 0.4, 5)
    tg = np.array([float(psi.subs(s, v)) for v in sg])
    dp = np.array([float(sp.diff(psi, s).subs(s, v)) for v in sg])
    W = invariants_along(LinearODECoeffs.from_exprs(p, t).sampled(tg, N + 3))
    Wt = invariants_along(LinearODECoeffs.from_exprs(q, s).sampled(sg, N + 3))
    for k in W.values:
        ref = dp ** k * W.values[k]
        assert np.allclose(Wt.values[k], ref, rtol=1e-7, atol=1e-9 * (1 + np.max(np.abs(ref))))


def test_rescaling_does_not_change_invariants():
    # e -> exp(t^2) e turns e'''' = t e into an equation with every coefficient populated
    N = 3
    lam = sp.exp(t ** 2)
    Es = sp.symbols("E0:5")
    u = lam * sp.Function("e")(t)
    ders = [sp.diff(u, t, k) for k in range(N + 2)]
    e = sp.Function("e")(t)
    sub = {sp.diff(e, t, k): Es[k] for k in range(N + 1, 0, -1)}
    sub[e] = Es[0]
    rows = [sp.expand(d.subs(sub)) for d in ders]
    rows[-1] = sp.expand(rows[-1].subs(Es[4], t * Es[0]))
    M = sp.Matrix([[r.coeff(Es[j]) for j in range(N + 1)] for r in rows[:-1]])
    rhs = sp.Matrix([rows[-1].coeff(Es[j]) for j in range(N + 1)])
    q = [sp.simplify(v) for v in M.T.LUsolve(rhs)]
    grid = np.linspace(0.1, 0.6, 5)
    W0 = invariants_along(LinearODECoeffs.from_exprs([t, 0, 0, 0], t).sampled(grid, N + 3))
    W1 = invariants_along(LinearODECoeffs.from_exprs(q, t).sampled(grid, N + 3))
    for k in W0.values:
        assert np.allclose(W0.values[k], W1.values[k], rtol=1e-8, atol=1e-8)


def test_rational_normal_curve_is_flat():
    w = wilczynski_invariants(canonicalize(LinearODECoeffs.from_exprs([0] * 6, t)))
    assert all(v == 0 for v in w.values.values())
    g = fundamental_system(LinearODECoeffs.from_exprs([0] * 4, t), make_grid(0, 1, 9))
    # solutions of e'''' = 0 with identity initial frame are t^k/k!
    assert np.allclose(g.points[:, 3], g.t ** 3 / 6, atol=1e-12)


def test_symbolic_canonical_form_of_constant_equation():
    w = wilczynski_invariants(canonicalize(LinearODECoeffs.from_exprs([1, 0, 0, 0, 0, 0], t)))
    assert w.values[6] == 30240 and all(w.values[k] == 0 for k in (3, 4, 5))


def test_noncanonical_input_rejected():
    with pytest.raises(CanonicalFormError):
        wilczynski_invariants(LinearODECoeffs.from_exprs([0, 0, t, 1], t))


def _closed_form_ratio(n, f, generator, seed):
    E = euler_lagrange(Lagrangian(n, f))
    closed = compile_exprs([generator(E)], [X] + [Y(i) for i in range(2 * n)])
    ratios = []
    for tr, w in random_solutions(E, seed, 2, make_grid(0, 0.5, 9),
                                  accept=lambda tr: invariants_along(linearize_along(E, tr, E.N + 4))):
        c = np.asarray(closed(tr.x, *tr.samples.T)[0], dtype=float)
        ratios.append(w.values[4] / c)
    return np.concatenate(ratios)


@pytest.mark.parametrize("f", [Y(3) ** 4 + Y(1) * Y(3) ** 2, Y(3) ** 3 + Y(2) ** 2 * Y(3) + Y(0) * Y(3) ** 2])
def test_order6_closed_form_ratio(f):
    r = _closed_form_ratio(3, f, generalized_wilczynski_order6, 1)
    assert np.allclose(r, 864, rtol=1e-7)


@pytest.mark.parametrize("f", [Y(4) ** 3 + Y(2) * Y(4) ** 2, Y(4) ** 4 + Y(1) * Y(4) ** 2 + Y(2) ** 2 * Y(4)])
def test_order8_closed_form_ratio(f):
    r = _closed_form_ratio(4, f, generalized_wilczynski_order8, 2)
    assert np.allclose(r, 190080 / 7, rtol=1e-6)


@pytest.mark.parametrize("n,f", [(3, Y(3) ** 4 + Y(1) * Y(3) ** 2), (3, Y(3) ** sp.Rational(1, 3)),
                                 (4, Y(4) ** 3 + Y(2) * Y(4) ** 2)])
def test_odd_invariants_vanish_along_el_solutions(n, f):
    E = euler_lagrange(Lagrangian(n, f))
    sols = random_solutions(E, 5, 2, make_grid(0, 0.5, 17),
                            accept=lambda tr: invariants_along(linearize_along(E, tr, E.N + 4)))
    for _, w in sols:
        assert odd_invariants_vanish(w, 1e-6)


def test_non_variational_equation_has_nonzero_odd_invariant():
    E = OrdODE(6, Y(5))
    sols = random_solutions(E, 0, 1, make_grid(0, 1, 9),
                            accept=lambda tr: invariants_along(linearize_along(E, tr, E.N + 4)))
    w = sols[0][1]
    assert invariant_status(w, 3) is Verdict.NONZERO
    assert not flatness_test(w)


def _linearization_curve(E, seed, grid):
    (tr, _), = random_solutions(E, seed, 1, grid)
    return fundamental_system(linearize_along(E, tr), grid)


def test_selfdual_positive():
    E = euler_lagrange(Lagrangian(3, Y(3) ** 4 + Y(1) * Y(3) ** 2))
    form = selfdual_test(_linearization_curve(E, 0, make_grid(0, 1, 33)))
    assert form is not None and form.residual < 1e-6
    B = form.B
    assert np.allclose(B, -B.T)
    assert abs(np.linalg.det(B)) > 1e-6


def test_selfdual_negative_control():
    E = OrdODE(6, Y(5))
    assert selfdual_test(_linearization_curve(E, 0, make_grid(0, 1, 33))) is None


def test_selfdual_rejects_even_N():
    g = fundamental_system(LinearODECoeffs.from_exprs([0] * 3, t), make_grid(0, 1, 5))
    with pytest.raises(ValueError):
        selfdual_test(g)


def test_osculating_flag_of_polynomial_curve():
    g = fundamental_system(LinearODECoeffs.from_exprs([0] * 4, t), make_grid(0, 1, 5))
    U = osculating_flag(g, 1)
    assert U.shape == (5, 4, 2)
    for m in range(5):
        P = U[m] @ U[m].T
        assert np.allclose(P @ g.frames[m, 1], g.frames[m, 1])
