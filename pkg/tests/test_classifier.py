import json
import random

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from conftest import random_poly_lagrangian, random_y3_poly
from varode.classifier import (INCONCLUSIVE, MAXIMAL, NOT_MAXIMAL, ClassifyOptions, I_invariant,
                               classify, constant_coefficient_invariants, extra_conditions,
                               n2_caveat_demo, random_solutions, syzygy_check_n3, syzygy_check_n4)
from varode.expr import Verdict, X, Y, normalize
from varode.jets import IntegrationError, Lagrangian, OrdODE, divergence_shift, euler_lagrange, make_grid

R = sp.Rational


def test_I_invariant_examples():
    assert normalize(I_invariant(Lagrangian(3, Y(3) ** R(1, 3))) - 5 / Y(3)) == 0
    assert I_invariant(Lagrangian(3, Y(3) ** 2)) == 0


def test_extra_conditions():
    assert extra_conditions(euler_lagrange(Lagrangian(3, Y(3) ** 2 + Y(1) ** 2)), 3)
    assert not extra_conditions(euler_lagrange(Lagrangian(3, Y(3) ** 3)), 3)


@pytest.mark.parametrize("f", [Y(3) ** 4, Y(3) ** 3 - Y(3) ** 2, 2 * Y(3) ** 4 + Y(3) ** 3 + Y(3) ** 2])
def test_syzygy_n3(f):
    r = syzygy_check_n3(Lagrangian(3, f))
    assert r.ok and r.verdict is Verdict.ZERO


def test_syzygy_n4():
    r = syzygy_check_n4(Lagrangian(4, Y(4) ** 4 + Y(4) ** 3))
    assert r.ok


def test_random_y3_polynomials_satisfy_syzygy():
    rng = random.Random(11)
    for _ in range(2):
        assert syzygy_check_n3(random_y3_poly(rng)).ok


def test_constant_coefficient_invariants():
    assert constant_coefficient_invariants(OrdODE(6, Y(3))) is not None
    assert constant_coefficient_invariants(OrdODE(6, Y(3) ** 2)) is None
    w = constant_coefficient_invariants(OrdODE(6, Y(0)))
    assert w.values[6] == 30240 and w.values[4] == 0


def test_random_solutions_are_reproducible():
    E = euler_lagrange(Lagrangian(3, Y(3) ** 4 + Y(0) * Y(3) ** 2))
    a = random_solutions(E, 7, 2, make_grid(0, 0.5, 5))
    b = random_solutions(E, 7, 2, make_grid(0, 0.5, 5))
    for (ta, _), (tb, _) in zip(a, b):
        assert np.array_equal(ta.samples, tb.samples)


def test_random_solutions_give_up_cleanly():
    E = OrdODE(2, 50 * (1 + Y(1) ** 2))  # y1 behaves like tan(50 x): blows up from every start
    with pytest.raises(IntegrationError):
        random_solutions(E, 0, 1, make_grid(0, 20, 5), attempts=3)


# ---------------------------------------------------------------- verdicts
def test_flat_model_is_maximal():
    rep = classify(Lagrangian(3, Y(3) ** 2))
    assert rep.verdict == MAXIMAL
    assert rep.expected_symmetry_dims["table_row"]["equation"] == 10


def test_flat_model_n4_is_maximal():
    assert classify(Lagrangian(4, Y(4) ** 2)).verdict == MAXIMAL


def test_cube_root_is_not_maximal():
    rep = classify(Lagrangian(3, Y(3) ** R(1, 3)))
    assert rep.verdict == NOT_MAXIMAL
    I = next(e for e in rep.evidence if e.name == "I")
    assert I.status == "nonzero" and I.witness == "5/y3"
    assert rep.expected_symmetry_dims["table_row"]["equation"] == 7


def test_lower_order_squares_not_maximal():
    rep = classify(Lagrangian(3, Y(3) ** 2 + Y(0) ** 2))
    assert rep.verdict == NOT_MAXIMAL
    w6 = next(e for e in rep.evidence if e.name == "W6_along_solutions")
    assert w6.witness["sup"] > 1e3
    assert rep.self_tests["W3_sup"] < 1e-6 and rep.self_tests["W5_sup"] < 1e-6


def test_ode_input_and_odd_order():
    assert classify(OrdODE(6, sp.Integer(0))).verdict == MAXIMAL
    with pytest.raises(ValueError):
        classify(OrdODE(5, sp.Integer(0)))


def test_report_json_is_deterministic():
    a = classify(Lagrangian(3, Y(3) ** 4 + Y(1) * Y(3) ** 2), options=ClassifyOptions(seed=3)).to_json()
    b = classify(Lagrangian(3, Y(3) ** 4 + Y(1) * Y(3) ** 2), options=ClassifyOptions(seed=3)).to_json()
    assert a == b and json.loads(a)["verdict"] == NOT_MAXIMAL


def test_n2_is_never_maximal():
    assert classify(Lagrangian(2, Y(2) ** 2)).verdict == INCONCLUSIVE


def test_n2_caveat_demo():
    d = n2_caveat_demo()
    assert d["matches_expected"]
    assert d["implicit_form"] == "3*y2*y4 - 5*y3^2 = 0"
    assert d["sup_invariants"]["W3"] < 1e-6 and d["sup_invariants"]["W4"] < 1e-6
    assert d["verdict"] == INCONCLUSIVE


# ---------------------------------------------------------------- invariance (exact evidence only, fast)
_EXACT = ClassifyOptions(numeric=False)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([R(1, 2), 3, -2]), st.integers(-2, 2))
def test_verdict_invariant_under_equivalences(seed, alpha, c):
    L = random_poly_lagrangian(random.Random(seed))
    base = classify(L, options=_EXACT).verdict
    shifted = [
        Lagrangian(3, alpha * L.f),
        divergence_shift(L, c * X * Y(0) * Y(2) + Y(1) ** 2),
        Lagrangian(3, L.f.subs(X, X + c)),
        Lagrangian(3, L.f.subs(Y(0), Y(0) + c)),
    ]
    for M in shifted:
        assert classify(M, options=_EXACT).verdict == base
