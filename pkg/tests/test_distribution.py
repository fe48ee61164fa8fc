import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from varode.classifier import random_solutions
from varode.distribution import (ProjectiveFitError, VectorField, abnormal_extremal_ode, base_chart,
                                 build_distribution, characteristic_kernel, compare_projective,
                                 derived_flag, distribution_class, integrate_abnormal, jacobi_consistency,
                                 jacobi_curve, lie_bracket, random_point, transport_linearization_curve,
                                 verify_z_symmetry)
from varode.expr import XI, X, Y, Z
from varode.jets import DegenerateLagrangianError, Lagrangian, euler_lagrange, make_grid, solve_ivp
from varode.legendre import matched_abnormal_state
from varode.wilczynski import (ProjectiveCurve, canonicalize, coefficients_from_jets, flatness_test,
                               wilczynski_invariants)

CHART = (X, Y(0), Y(1))


# ---------------------------------------------------------------- brackets
def test_bracket_example():
    V = VectorField(CHART, [1, Y(1), 0])
    W = VectorField.coordinate(CHART, Y(1))
    assert lie_bracket(V, W).coeffs == (0, -1, 0)


monomials = st.builds(lambda c, a, b, e: c * a ** e * b, st.integers(-2, 2), st.sampled_from(CHART),
                      st.sampled_from(CHART + (sp.Integer(1),)), st.integers(0, 2))
fields = st.lists(monomials, min_size=3, max_size=3).map(lambda cs: VectorField(CHART, cs))


@settings(max_examples=25, deadline=None)
@given(fields, fields, fields)
def test_bracket_jacobi_identity_and_antisymmetry(U, V, W):
    assert (lie_bracket(U, V) + lie_bracket(V, U)).is_zero()
    total = lie_bracket(U, lie_bracket(V, W)) + lie_bracket(V, lie_bracket(W, U)) + lie_bracket(W, lie_bracket(U, V))
    assert all(sp.expand(c) == 0 for c in total.coeffs)


def test_chart_mismatch_rejected():
    with pytest.raises(ValueError):
        lie_bracket(VectorField(CHART, [1, 0, 0]), VectorField((X, Y(0)), [1, 0]))


# ---------------------------------------------------------------- growth vector
@pytest.mark.parametrize("n,expected", [(3, (2, 3, 5, 6)), (4, (2, 3, 5, 6, 7))])
def test_growth_vector_of_flat_model(n, expected):
    D = build_distribution(Lagrangian(n, Y(n) ** 2))
    for seed in range(5):
        rep = derived_flag(D, random_point(D.chart, seed), seed=seed)
        assert rep.growth == expected
        assert rep.full and not rep.degenerate


def test_growth_vector_generic_lagrangian():
    D = build_distribution(Lagrangian(3, Y(3) ** 4 + Y(1) * Y(3) ** 2 + Y(0) ** 2))
    assert derived_flag(D, random_point(D.chart, 1)).growth == (2, 3, 5, 6)


def test_linear_lagrangian_stalls():
    D = build_distribution(Lagrangian(3, X * Y(3)))
    rep = derived_flag(D, random_point(D.chart, 0))
    assert rep.degenerate and rep.growth[-1] < 6


def test_z_symmetry():
    for f in (Y(3) ** 2, Y(3) ** sp.Rational(1, 3), Y(3) ** 4 + X * Y(0) * Y(3) ** 2):
        assert verify_z_symmetry(build_distribution(Lagrangian(3, f)))


# ---------------------------------------------------------------- abnormal extremals
def test_u_star_of_flat_model():
    S = abnormal_extremal_ode(Lagrangian(3, Y(3) ** 2))
    assert sp.simplify(S.u_star + XI(1) / 2) == 0


def test_u_star_with_lower_terms():
    # f = y3^2 + y2*y3: f_{y2} = y3, f_{y3} = 2 y3 + y2, total derivative part y3 -> u = (y3 - xi1 - y3)/2
    S = abnormal_extremal_ode(Lagrangian(3, Y(3) ** 2 + Y(2) * Y(3)))
    assert sp.simplify(S.u_star + XI(1) / 2) == 0


def test_singular_control_rejected():
    with pytest.raises(DegenerateLagrangianError):
        abnormal_extremal_ode(Lagrangian(3, Y(2) * Y(3)))


@pytest.mark.parametrize("f", [Y(3) ** 2, Y(3) ** 4 + Y(1) * Y(3) ** 2 + Y(0) ** 2, Y(4) ** 2 + X * Y(4) ** 3])
def test_kernel_of_symplectic_form_is_characteristic_field(f):
    n = max(i for i in range(6) if f.has(Y(i)))
    S = abnormal_extremal_ode(Lagrangian(n, f))
    p = random_point(S.chart, 3)
    kernel = characteristic_kernel(S, p)
    C = S.field.evaluate(p)
    assert np.allclose(kernel, C / C[0], atol=1e-9)


@pytest.mark.parametrize("f", [Y(3) ** 2 + Y(0) ** 2, Y(3) ** 4 + Y(1) * Y(3) ** 2])
def test_abnormal_extremal_projects_to_el_solution(f):
    L = Lagrangian(3, f)
    E = euler_lagrange(L)
    grid = make_grid(0, 0.5, 11)
    (tr, _), = random_solutions(E, 4, 1, grid)
    ext = integrate_abnormal(L, matched_abnormal_state(L, grid[0], tr.samples[0]), grid)
    assert max(ext.meta["residuals"].values()) < 1e-8
    assert np.allclose(ext.samples[:, :4], tr.samples[:, :4], atol=1e-8)


# ---------------------------------------------------------------- class and Jacobi curves
@pytest.mark.parametrize("n", [3, 4])
def test_flat_model_has_maximal_class(n):
    L = Lagrangian(n, Y(n) ** 2)
    rep = distribution_class(L, random_point(base_chart(n), 0)[: n + 2])
    assert rep.m == n and rep.maximal_class
    # J^(0) is C plus the n fiber directions; J^(n) fills the (2n+1)-dimensional chart
    assert rep.dims[0] == n + 1 and rep.dims[n] == 2 * n + 1


def test_class_dimensions_are_symmetric():
    rep = distribution_class(Lagrangian(3, Y(3) ** 2), random_point(base_chart(3), 2)[:5])
    assert rep.dims == {0: 4, 1: 5, 2: 6, 3: 7, -1: 3, -2: 2, -3: 1}
    # skew complements: dim J^(k) + dim J^(-k) = dim + 1 (both contain the kernel C)
    assert all(rep.dims[k] + rep.dims[-k] == 8 for k in range(1, 4))


def _extremal_pair(L, seed=0, grid=None):
    E = euler_lagrange(L)
    grid = make_grid(0, 0.5, 9) if grid is None else grid
    (tr, _), = random_solutions(E, seed, 1, grid)
    ext = integrate_abnormal(L, matched_abnormal_state(L, grid[0], tr.samples[0]), grid)
    return E, tr, ext


def test_jacobi_curve_of_flat_model_is_flat():
    L = Lagrangian(3, Y(3) ** 2)
    _, _, ext = _extremal_pair(L)
    jc = jacobi_curve(L, ext)
    w = wilczynski_invariants(canonicalize(coefficients_from_jets(jc.meta["jets"], jc.t)))
    assert flatness_test(w, 1e-6)


@pytest.mark.parametrize("f", [Y(3) ** 2 + Y(0) ** 2, Y(3) ** 4 + Y(1) * Y(3) ** 2])
def test_jacobi_curve_matches_linearization(f):
    L = Lagrangian(3, f)
    E, tr, ext = _extremal_pair(L, seed=1)
    jc = jacobi_curve(L, ext)
    assert jacobi_consistency(L, ext, jc) < 1e-8
    m = compare_projective(transport_linearization_curve(E, tr), jc)
    assert m.matched and m.residual < 1e-5


def test_jacobi_curve_carries_nonflat_invariant():
    L = Lagrangian(3, Y(3) ** 2 + Y(0) ** 2)
    _, _, ext = _extremal_pair(L, seed=2)
    jc = jacobi_curve(L, ext)
    w = wilczynski_invariants(canonicalize(coefficients_from_jets(jc.meta["jets"], jc.t)))
    assert np.allclose(w.values[6], 30240, rtol=1e-5)


# ---------------------------------------------------------------- projective comparison
def _curve(seed, M=12, n=4):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 1, M)
    pts = np.stack([t ** k for k in range(n)], axis=1) + 0.1 * np.sin(np.outer(t, rng.uniform(1, 3, n)))
    frames = np.repeat(np.eye(n)[None], M, axis=0)
    frames[:, 0] = pts
    return ProjectiveCurve(t, frames)


def test_compare_projective_identity():
    g = _curve(0)
    m = compare_projective(g, g)
    assert m.matched and m.residual < 1e-12
    assert np.allclose(np.abs(m.A / m.A[0, 0]), np.eye(4), atol=1e-8)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_compare_projective_recovers_planted_map(seed):
    g = _curve(1)
    A = np.random.default_rng(seed).normal(size=(4, 4)) + 3 * np.eye(4)
    h = g.transformed(A)
    scale = np.random.default_rng(seed + 1).uniform(0.5, 2.0, size=g.t.size)
    h.frames[:, 0] *= scale[:, None]
    m = compare_projective(g, h)
    assert m.matched
    B = m.A / m.A.flat[np.argmax(np.abs(m.A))]
    A0 = A / A.flat[np.argmax(np.abs(m.A))]
    assert np.allclose(B, A0, atol=1e-6)


def test_compare_projective_rejects_unrelated_curves():
    g = _curve(2)
    rng = np.random.default_rng(5)
    h = ProjectiveCurve(g.t, g.frames.copy())
    h.frames[:, 0] = rng.normal(size=(g.t.size, 4))
    try:
        m = compare_projective(g, h)
    except ProjectiveFitError:
        return
    assert not m.matched
