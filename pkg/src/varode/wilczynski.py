"""Wilczynski invariants of linear ODEs and of the projective curves they define.

The linear equation is ``e^(N+1) = sum_i p_i(t) e^(i)``.  Canonicalization
works on local Taylor jets: at every base point ``t_m`` the coefficients are
expanded in a local parameter ``h`` and the normalizing scale and
reparametrization are found as truncated series.  The reparametrization is
pinned by ``phi(0) = 0, phi'(0) = 1, phi''(0) = 0``; with that convention the
value of each relative invariant at ``h = 0`` is a well-defined function of
``t_m``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from math import comb, factorial

import numpy as np
import scipy.integrate
import sympy as sp

from .expr import T, Verdict, compile_exprs, is_zero, normalize, total_derivative
from .jets import IntegrationError, LinearODECoeffs, OrdODE
from .series import Series, matmul_jets, matrix_inverse_jets


class CanonicalFormError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


class RegularityError(ArithmeticError):
    """Osculating frame is rank deficient somewhere on the grid."""


# ---------------------------------------------------------------------------
# local jets of the coefficients
# ---------------------------------------------------------------------------
def _numeric_jets(c: LinearODECoeffs) -> list[Series]:
    # stack[i, k, m] = p_i^(k)(t_m); NaN marks missing derivatives
    out = []
    for i in range(c.N + 1):
        d = c.stack[i]
        valid = d.shape[0]
        bad = np.where(~np.all(np.isfinite(d), axis=1))[0]
        if bad.size:
            valid = int(bad[0])
        out.append(Series.from_derivatives(d[:valid]))
    return out


def _symbolic_jets(c: LinearODECoeffs, order: int) -> list[Series]:
    out = []
    for i in range(c.N + 1):
        if c.jet_exprs is not None:
            ders = list(c.jet_exprs[i])
        else:
            ders, cur = [], c.exprs[i]
            for _ in range(order + 1):
                ders.append(cur)
                cur = sp.diff(cur, T)
        out.append(Series.from_derivatives(np.array(ders, dtype=object)))
    return out


def _zero_like(s: Series, order: int) -> Series:
    shape = (order + 1,) + s.batch_shape
    if s.c.dtype == object:
        return Series(np.full(shape, sp.Integer(0), dtype=object), order)
    return Series(np.zeros(shape), order)


def _simplify(s: Series) -> Series:
    if s.c.dtype != object:
        return s
    f = np.vectorize(lambda e: sp.cancel(sp.sympify(e)), otypes=[object])
    return Series(f(s.c), s.order)


def _exact_zero(s: Series) -> bool:
    if s.c.dtype == object:
        return all(sp.sympify(v) == 0 for v in s.c.ravel())
    return bool(np.all(s.c == 0))


# ---------------------------------------------------------------------------
# normalizing transformations
# ---------------------------------------------------------------------------
def scale_jets(P: list[Series]) -> list[Series]:
    """Coefficients of the equation for ``e / s`` with ``s'/s = p_N/(N+1)``.

    Obtained by substituting ``e = s u`` and expanding with Leibniz's rule.
    """
    N = len(P) - 1
    big = max(p.order for p in P) + N + 2
    if _exact_zero(P[N]):
        return [p for p in P[:N]] + [_zero_like(P[N], big)]
    if P[N].order < N:
        raise InsufficientDataError(f"scaling needs {N} derivatives of p_{N}, got {P[N].order}")
    factor = sp.Rational(1, N + 1) if P[N].c.dtype == object else 1.0 / (N + 1)
    s = (P[N] * factor).integrate().exp()
    # operator coefficients A_m of sum_m A_m D^m, A_{N+1} = 1
    A = [-p for p in P] + [None]
    sders = [s]
    for _ in range(N + 1):
        sders.append(sders[-1].diff())
    inv_s = s.reciprocal()
    out = []
    for j in range(N + 1):
        acc = sders[N + 1 - j] * comb(N + 1, j)
        for m in range(j, N + 1):
            acc = acc + A[m] * sders[m - j] * comb(m, j)
        out.append(_simplify(-(acc * inv_s)))
    out[N] = _zero_like(out[N], big)
    return out


def _reparam(Phat: list[Series], phi: Series) -> list[Series]:
    """Coefficients for ``v(tau) = phi'(tau)^(-N/2) u(phi(tau))``."""
    N = len(Phat) - 1
    dphi = phi.diff()
    g = dphi.rpow(-N, 2) if dphi.c.dtype != object else dphi ** sp.Rational(-N, 2)
    B = [[g]]
    for m in range(1, N + 2):
        prev = B[-1]
        row = []
        for j in range(m + 1):
            term = None
            if j < m:
                term = prev[j].diff()
            if j >= 1:
                t2 = dphi * prev[j - 1]
                term = t2 if term is None else term + t2
            row.append(term)
        B.append(row)
    top = B[N + 1]
    lead = top[N + 1]
    comp = [p.compose(phi) if not _exact_zero(p) else None for p in Phat]
    b = []
    for j in range(N + 1):
        bj = top[j]
        if comp[j] is not None:
            bj = bj + lead * comp[j]
        b.append(bj)
    q = [None] * (N + 1)
    for j in range(N, -1, -1):
        acc = b[j]
        for m in range(j + 1, N + 1):
            acc = acc - q[m] * B[m][j]
        q[j] = acc / B[j][j]
    return q


def _phi_series(coeffs, order, batch, obj):
    if obj:
        c = np.full((order + 1,) + batch, sp.Integer(0), dtype=object)
    else:
        c = np.zeros((order + 1,) + batch)
    c[1] = 1
    for k, v in coeffs.items():
        c[k] = v
    return Series(c, order)


def canonical_jets(P: list[Series]) -> tuple[list[Series], Series]:
    """Local Laguerre-Forsyth jets ``q_i`` and the reparametrization used."""
    N = len(P) - 1
    obj = P[0].c.dtype == object
    Phat = scale_jets(P)
    batch = P[0].batch_shape
    K = Phat[N - 1].order
    # phi beyond degree K+3 is not pinned down; extra zero terms only keep the
    # derivative bookkeeping of the scale factor from running dry
    span = K + N + 3
    coeffs = {}
    if _exact_zero(Phat[N - 1]):
        phi = _phi_series({}, span, batch, obj)
        return _reparam(Phat, phi), phi
    for k in range(3, K + 4):
        # coefficient k-3 of q_{N-1} is affine in phi_k
        coeffs[k] = 0
        a0 = _reparam(Phat, _phi_series(coeffs, span, batch, obj))[N - 1].c[k - 3]
        coeffs[k] = 1
        a1 = _reparam(Phat, _phi_series(coeffs, span, batch, obj))[N - 1].c[k - 3]
        if obj:
            coeffs[k] = sp.cancel(-a0 / (a1 - a0))
        else:
            coeffs[k] = -a0 / (a1 - a0)
    phi = _phi_series(coeffs, span, batch, obj)
    q = [_simplify(s) for s in _reparam(Phat, phi)]
    return q, phi


def canonicalize(c: LinearODECoeffs, derivatives: int | None = None) -> LinearODECoeffs:
    """Laguerre-Forsyth form ``p_N = p_{N-1} = 0`` at every base point.

    Numeric input returns a derivative stack whose entry ``[i, k, m]`` is the
    ``k``-th derivative of the canonical ``q_i`` in the local parameter at
    ``t_m`` (NaN where the input jets are too short).  Symbolic input returns
    expressions in ``t`` together with their local jets.
    """
    N = c.N
    if c.symbolic:
        K = derivatives if derivatives is not None else N + 1
        P = _symbolic_jets(c, K)
        q, _ = canonical_jets(P)
        jets = []
        for s in q:
            ders = s.derivatives(min(s.order, K))
            jets.append([normalize(sp.sympify(v)) for v in ders])
        exprs = [j[0] for j in jets]
        return LinearODECoeffs(N, exprs=exprs, jet_exprs=jets, meta={"canonical": True})
    P = _numeric_jets(c)
    if not np.all(np.isfinite(c.stack[:, 0])):
        raise CanonicalFormError("coefficients not finite on the grid")
    # orders beyond the input jets come out as inf/NaN; consumers reject non-finite entries
    with np.errstate(divide="ignore", invalid="ignore"):
        q, _ = canonical_jets(P)
    K = c.stack.shape[1] - 1
    stack = np.full((N + 1, K + 1, c.stack.shape[2]), np.nan)
    for i, s in enumerate(q):
        ders = s.derivatives(min(s.order, K))
        stack[i, : ders.shape[0]] = ders
    return LinearODECoeffs(N, t=c.t, stack=stack, func=None, meta={"canonical": True})


# ---------------------------------------------------------------------------
# invariants
# ---------------------------------------------------------------------------
def wilczynski_coefficient(N: int, k: int, j: int) -> int:
    val = (-1) ** (j + 1) * factorial(2 * k - j - 1) * factorial(N - k + j)
    den = factorial(k - j) * factorial(j - 1)
    assert val % den == 0
    return val // den


@dataclass
class WilczynskiValues:
    N: int
    values: dict  # k -> Expr or ndarray over t
    t: np.ndarray | None = None
    scale: dict = field(default_factory=dict)  # k -> sup of |terms| (numeric mode)

    def __post_init__(self):
        if sorted(self.values) != list(range(3, self.N + 2)):
            raise ValueError("invariants must be indexed 3..N+1")

    @property
    def symbolic(self) -> bool:
        return self.t is None

    def __getitem__(self, k):
        return self.values[k]

    def to_csv(self, label="t") -> str:
        if self.symbolic:
            raise ValueError("CSV export needs sampled invariants")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([label] + [f"W{k}" for k in sorted(self.values)])
        for m, tv in enumerate(self.t):
            w.writerow([repr(float(tv))] + [repr(float(self.values[k][m])) for k in sorted(self.values)])
        return buf.getvalue()


def _check_canonical(c: LinearODECoeffs, tol: float):
    N = c.N
    if c.symbolic:
        for i in (N, N - 1):
            if is_zero(c.exprs[i]) is not Verdict.ZERO:
                raise CanonicalFormError(f"p_{i} does not vanish")
        return
    ref = 1.0 + np.nanmax(np.abs(c.stack))
    for i in (N, N - 1):
        row = c.stack[i]
        row = row[np.all(np.isfinite(row), axis=1)]
        if np.max(np.abs(row), initial=0.0) > tol * ref:
            raise CanonicalFormError(f"p_{i} does not vanish (max {np.max(np.abs(row)):.3g})")


def wilczynski_invariants(c: LinearODECoeffs, tol: float = 1e-8) -> WilczynskiValues:
    """``W_3..W_{N+1}`` of a system already in canonical form."""
    _check_canonical(c, tol)
    N = c.N
    values, scale = {}, {}
    for k in range(3, N + 2):
        terms = []
        for j in range(1, k - 1):
            i, d = N - k + j, j - 1
            coef = wilczynski_coefficient(N, k, j)
            if c.symbolic:
                if c.jet_exprs is not None:
                    if d >= len(c.jet_exprs[i]):
                        raise InsufficientDataError(f"need derivative {d} of p_{i}")
                    der = c.jet_exprs[i][d]
                else:
                    der = sp.diff(c.exprs[i], T, d)
                terms.append(coef * der)
            else:
                if d >= c.stack.shape[1] or not np.all(np.isfinite(c.stack[i, d])):
                    raise InsufficientDataError(f"need derivative {d} of p_{i}")
                terms.append(coef * c.stack[i, d])
        if c.symbolic:
            values[k] = normalize(sp.Add(*terms))
        else:
            values[k] = np.sum(terms, axis=0)
            scale[k] = float(np.max(np.sum(np.abs(terms), axis=0)))
    return WilczynskiValues(N, values, t=None if c.symbolic else c.t, scale=scale)


def invariants_along(c: LinearODECoeffs) -> WilczynskiValues:
    return wilczynski_invariants(canonicalize(c))


def invariant_status(w: WilczynskiValues, k: int, tol: float = 1e-6) -> Verdict:
    """Zero verdict for one invariant.

    Numeric values vanish when ``sup|W_k| < tol * (1 + S_k)``, ``S_k`` being the
    sup of the summed absolute terms of the formula, so the test measures
    cancellation rather than raw size.
    """
    v = w.values[k]
    if w.symbolic:
        return is_zero(v, tol=tol)
    if np.max(np.abs(v)) < tol * (1.0 + w.scale.get(k, 0.0)):
        return Verdict.PROBABLY_ZERO
    return Verdict.NONZERO


def odd_invariants_vanish(w: WilczynskiValues, tol: float = 1e-6) -> bool:
    return all(invariant_status(w, k, tol) is not Verdict.NONZERO for k in w.values if k % 2 == 1)


def flatness_test(w: WilczynskiValues, tol: float = 1e-6) -> bool:
    return all(invariant_status(w, k, tol) is not Verdict.NONZERO for k in w.values)


# ---------------------------------------------------------------------------
# closed forms for variational equations of order 6 and 8
# ---------------------------------------------------------------------------
def _F_partials(E: OrdODE):
    ctx = E.context

    def Fi(*idx):
        return E.partial(*idx)

    def Dx(e, times=1):
        for _ in range(times):
            e = total_derivative(e, ctx)
        return e

    return Fi, Dx


def generalized_wilczynski_order6(E: OrdODE) -> sp.Expr:
    if E.order != 6:
        raise ValueError("needs an equation of order 6")
    F, D = _F_partials(E)
    R = sp.Rational
    F2, F3, F4, F5 = F(2), F(3), F(4), F(5)
    F5x = D(F5)
    W = (
        -R(5, 36) * D(F5, 3) + R(2, 21) * F4 * F5**2 - R(5, 12) * D(F3) + R(1, 3) * D(F4, 2)
        + R(5, 18) * F5 * D(F5, 2) + R(5, 36) * F3 * F5 - R(5, 21) * F5**2 * F5x - R(37, 126) * F4 * F5x
        + R(5, 252) * F5**4 + R(37, 630) * F4**2 + R(25, 84) * F5x**2 + R(5, 18) * F2 - R(5, 18) * F5 * D(F4)
    )
    return sp.expand(W)


def generalized_wilczynski_order8(E: OrdODE) -> sp.Expr:
    if E.order != 8:
        raise ValueError("needs an equation of order 8")
    F, D = _F_partials(E)
    R = sp.Rational
    F4, F5, F6, F7 = F(4), F(5), F(6), F(7)
    F7x = D(F7)
    W = (
        R(35, 528) * F5 * F7 + R(49, 176) * F7 * D(F7, 2) + R(7, 22) * D(F6, 2) - R(35, 176) * F7 * D(F6)
        - R(1127, 6336) * F7**2 * F7x + R(161, 3168) * F6 * F7**2 + R(931, 3168) * F7x**2 + R(7, 66) * F4
        + R(47, 1584) * F6**2 + R(1127, 101376) * F7**4 - R(329, 1584) * F6 * F7x - R(49, 264) * D(F7, 3)
        - R(35, 132) * D(F5)
    )
    return sp.expand(W)


# ---------------------------------------------------------------------------
# curves
# ---------------------------------------------------------------------------
@dataclass
class ProjectiveCurve:
    """Moving frame ``frames[m, i] = e_i(t_m) = e_0^(i)(t_m)`` in ``R^(N+1)``."""

    t: np.ndarray
    frames: np.ndarray  # (M, N+1, N+1)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 3 or self.frames.shape[1] != self.frames.shape[2]:
            raise ValueError("frames must have shape (M, N+1, N+1)")
        if self.frames.shape[0] != self.t.size:
            raise ValueError("one frame per sample")

    @property
    def N(self) -> int:
        return self.frames.shape[1] - 1

    @property
    def points(self) -> np.ndarray:
        return self.frames[:, 0, :]

    def transformed(self, A) -> "ProjectiveCurve":
        """Image under the linear map ``A``."""
        return ProjectiveCurve(self.t, self.frames @ np.asarray(A).T, dict(self.meta))

    def min_abs_det(self) -> float:
        f = self.frames / np.linalg.norm(self.frames, axis=2, keepdims=True)
        return float(np.min(np.abs(np.linalg.det(f))))


def _coefficient_function(c: LinearODECoeffs):
    if c.symbolic:
        fn = compile_exprs(c.exprs, [T])
        return lambda s: np.array([float(v) for v in fn(float(s))])
    if c.func is None:
        raise ValueError("numeric coefficients need a callable to integrate against")
    return c.func


def fundamental_system(c: LinearODECoeffs, grid, rtol: float = 1e-11, atol: float = 1e-13) -> ProjectiveCurve:
    """Solutions with identity initial frame at ``grid[0]``."""
    grid = np.asarray(grid, dtype=float)
    N = c.N
    p = _coefficient_function(c)

    def rhs(s, y):
        Yv = y.reshape(N + 1, N + 1)
        out = np.empty_like(Yv)
        out[:-1] = Yv[1:]
        out[-1] = p(s) @ Yv
        return out.ravel()

    sol = scipy.integrate.solve_ivp(rhs, (grid[0], grid[-1]), np.eye(N + 1).ravel(), method="DOP853",
                                    t_eval=grid, rtol=rtol, atol=atol)
    if sol.status != 0:
        raise IntegrationError(f"fundamental system: {sol.message}")
    frames = sol.y.T.reshape(grid.size, N + 1, N + 1)
    return ProjectiveCurve(grid, frames, meta={"source": "fundamental_system"})


def osculating_flag(g: ProjectiveCurve, i: int, rcond: float = 1e-10) -> np.ndarray:
    """Orthonormal bases ``(M, N+1, i+1)`` of ``span(e_0..e_i)``."""
    if not 0 <= i <= g.N:
        raise ValueError("osculating index out of range")
    out = np.empty((g.t.size, g.N + 1, i + 1))
    for m in range(g.t.size):
        A = g.frames[m, : i + 1].T
        U, s, _ = np.linalg.svd(A, full_matrices=False)
        if s[-1] <= rcond * s[0]:
            raise RegularityError(f"osculating space {i} degenerates at t={g.t[m]:.6g}")
        out[m] = U
    return out


@dataclass
class DualityForm:
    B: np.ndarray
    kind: str
    residual: float
    ambiguous: bool = False
    singular_values: np.ndarray | None = None


class AmbiguousDualityError(ValueError):
    def __init__(self, msg, witness):
        super().__init__(msg)
        self.witness = witness


def _skew_basis(n):
    idx = [(a, b) for a in range(n) for b in range(a + 1, n)]
    return idx


def selfdual_test(g: ProjectiveCurve, tol: float = 1e-6, nondegeneracy: float = 1e-6,
                  ambiguity: float = 1e-8):
    """Constant skew form making the ``(N-1)/2``-th osculating spaces isotropic, or None.

    Isotropy of a moving flag under a constant form differentiates to
    ``B(e_i, e_j) = 0`` for all ``i + j <= N - 1``; all of these rows enter the
    fit and the residual.
    """
    N = g.N
    if N % 2 == 0:
        raise ValueError("self-duality via a skew form needs odd N")
    n = N + 1
    idx = _skew_basis(n)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if i + j <= N - 1]
    unit = g.frames / np.linalg.norm(g.frames, axis=2, keepdims=True)
    rows = []
    for m in range(g.t.size):
        for i, j in pairs:
            u, v = unit[m, i], unit[m, j]
            rows.append([u[a] * v[b] - u[b] * v[a] for a, b in idx])
    A = np.asarray(rows)
    _, s, Vt = np.linalg.svd(A, full_matrices=False)
    x = Vt[-1]
    B = np.zeros((n, n))
    for val, (a, b) in zip(x, idx):
        B[a, b], B[b, a] = val, -val
    B /= np.linalg.norm(B)
    I, J = zip(*pairs)
    vals = np.einsum("mia,ab,mib->mi", unit[:, list(I)], B, unit[:, list(J)])
    resid = float(np.max(np.abs(vals)))
    sB = np.linalg.svd(B, compute_uv=False)
    if resid >= tol or sB[-1] < nondegeneracy * sB[0]:
        return None
    if s.size > 1 and s[-2] < ambiguity * s[0]:
        raise AmbiguousDualityError("isotropy system has a solution space of dimension > 1",
                                    witness={"singular_values": s[-3:].tolist()})
    return DualityForm(B, "skew", resid, singular_values=s[-3:])


def coefficients_from_jets(e0_jets, t=None) -> LinearODECoeffs:
    """Linear equation satisfied by a curve, from Taylor jets of its lift.

    ``e0_jets[k, m, :]`` is the ``h^k`` coefficient of ``e_0(t_m + h)``.  The
    coefficients solve ``e_0^(N+1) = sum_i p_i e_0^(i)`` as jets, through the
    series inverse of the Wronskian.
    """
    e0_jets = np.asarray(e0_jets)
    L, M, n = e0_jets.shape[0] - 1, e0_jets.shape[1], e0_jets.shape[2]
    N = n - 1
    if L < N + 2:
        raise InsufficientDataError("need at least N+3 Taylor coefficients of the curve")
    s = Series(e0_jets, L)
    ders = [s]
    for _ in range(N + 1):
        ders.append(ders[-1].diff())
    K = ders[-1].order
    Wr = np.stack([d.c[: K + 1] for d in ders[: N + 1]], axis=-2)  # (K+1, M, N+1 rows i, N+1 comps)
    rhs = ders[N + 1].c[: K + 1][:, :, None, :]  # (K+1, M, 1, N+1)
    p = matmul_jets(rhs, matrix_inverse_jets(Wr))[:, :, 0, :]  # (K+1, M, N+1)
    if np.iscomplexobj(p):
        p = p.real
    stack = np.empty((N + 1, K + 1, M))
    for k in range(K + 1):
        stack[:, k, :] = p[k].T * factorial(k)
    return LinearODECoeffs(N, t=np.arange(M, dtype=float) if t is None else np.asarray(t, float), stack=stack)
