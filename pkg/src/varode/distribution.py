"""Rank-2 distributions of Lagrangians, abnormal extremals and Jacobi curves.

A density ``f(x, y0..yn)`` defines the distribution spanned by

    X1 = d/dx + sum_{i<n} y_{i+1} d/dy_i + f d/dz,    X2 = d/dy_n

on the chart ``(x, y0..yn, z)``.  Abnormal extremals are handled on the
reduced chart ``(x, y0..yn, xi0..xi_{n-2})``: ``z``-translations are divided
out and the covector is normalized by ``nu = -1``.  On that chart the
characteristic direction is the explicit field ``C`` returned by
:func:`abnormal_extremal_ode` and the symplectic structure is ``d rho``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import sympy as sp

from .expr import XI, X, Y, Z, Verdict, compile_exprs, is_zero, normalize
from .jets import (
    DegenerateLagrangianError,
    IntegrationError,
    Lagrangian,
    SingularityError,
    Trajectory,
    _integrate,
)
from .series import Series, matrix_inverse_jets
from .wilczynski import ProjectiveCurve, RegularityError

RANK_RTOL = 1e-9


class RankJumpError(ArithmeticError):
    """Numeric ranks differ between a point and its perturbations."""


class ProjectiveFitError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# vector fields
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class VectorField:
    chart: tuple
    coeffs: tuple

    def __post_init__(self):
        object.__setattr__(self, "chart", tuple(self.chart))
        object.__setattr__(self, "coeffs", tuple(sp.sympify(c) for c in self.coeffs))
        if len(self.chart) != len(self.coeffs):
            raise ValueError("one coefficient per chart coordinate required")

    @classmethod
    def coordinate(cls, chart, sym):
        return cls(chart, [sp.Integer(1) if s == sym else sp.Integer(0) for s in chart])

    def __call__(self, g):
        """Derivative of the function ``g`` along the field."""
        return sum((c * sp.diff(g, s) for s, c in zip(self.chart, self.coeffs) if c != 0), sp.Integer(0))

    def __add__(self, other):
        _same_chart(self, other)
        return VectorField(self.chart, [a + b for a, b in zip(self.coeffs, other.coeffs)])

    def __neg__(self):
        return VectorField(self.chart, [-c for c in self.coeffs])

    def __sub__(self, other):
        return self + (-other)

    def scaled(self, g):
        return VectorField(self.chart, [g * c for c in self.coeffs])

    def simplified(self):
        return VectorField(self.chart, [normalize(c) for c in self.coeffs])

    def is_zero(self) -> bool:
        return all(c == 0 or is_zero(c) is Verdict.ZERO for c in self.coeffs)

    def evaluate(self, point) -> np.ndarray:
        return _compile_fields([self], self.chart)(point)[0]


def _same_chart(V, W):
    if V.chart != W.chart:
        raise ValueError("vector fields live on different charts")


def lie_bracket(V: VectorField, W: VectorField) -> VectorField:
    _same_chart(V, W)
    return VectorField(V.chart, [sp.expand(V(wk) - W(vk)) for vk, wk in zip(V.coeffs, W.coeffs)])


def _compile_fields(fields: Sequence[VectorField], chart):
    fn = compile_exprs([c for Vf in fields for c in Vf.coeffs], list(chart))
    d = len(chart)

    def evaluate(point):
        with np.errstate(all="raise"):
            vals = fn(*[float(v) for v in point])
        return np.array([float(v) for v in vals]).reshape(len(fields), d)

    return evaluate


def _rank(A, rtol=RANK_RTOL) -> int:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    return int(np.sum(s > rtol * s[0])) if s[0] > 0 else 0


# ---------------------------------------------------------------------------
# the distribution of a Lagrangian
# ---------------------------------------------------------------------------
def base_chart(n: int) -> tuple:
    return (X,) + tuple(Y(i) for i in range(n + 1)) + (Z,)


@dataclass(frozen=True)
class DistributionSpec:
    chart: tuple
    X1: VectorField
    X2: VectorField
    lagrangian: Lagrangian | None = None

    @property
    def n(self) -> int:
        return len(self.chart) - 3

    @property
    def generators(self):
        return (self.X1, self.X2)


def build_distribution(L: Lagrangian) -> DistributionSpec:
    n = L.order
    chart = base_chart(n)
    x1 = [sp.Integer(1)] + [Y(i + 1) for i in range(n)] + [sp.Integer(0), L.f]
    return DistributionSpec(chart, VectorField(chart, x1), VectorField.coordinate(chart, Y(n)), L)


@dataclass
class GrowthReport:
    growth: tuple
    dimension: int
    point: tuple
    degenerate: bool
    stable: bool

    @property
    def full(self) -> bool:
        return bool(self.growth) and self.growth[-1] == self.dimension


def _flag_generators(D: DistributionSpec, point, max_steps: int):
    """Greedy generators of ``D^1, D^2, ...`` that raise the rank at ``point``."""
    d = len(D.chart)
    gens = [D.X1, D.X2]
    vals = list(_compile_fields(gens, D.chart)(point))
    levels = [list(gens)]
    newest = list(gens)
    for _ in range(max_steps):
        if len(gens) == d:
            break
        cand = [lie_bracket(a, b) for a in (D.X1, D.X2) for b in newest]
        cvals = _compile_fields(cand, D.chart)(point) if cand else []
        added = []
        for V, v in zip(cand, cvals):
            if _rank(vals + [v]) > len(vals):
                vals.append(v)
                gens.append(V)
                added.append(V)
        if not added:
            break
        newest = added
        levels.append(list(gens))
    return levels


def _growth_at(levels, chart, point):
    out = []
    for lev in levels:
        out.append(_rank(_compile_fields(lev, chart)(point)))
    return tuple(out)


def derived_flag(D: DistributionSpec, point, seed: int = 0, perturbations: int = 5,
                 radius: float = 1e-3, max_steps: int | None = None) -> GrowthReport:
    """Small growth vector ``(dim D^1, dim D^2, ...)`` at ``point``.

    Brackets are formed symbolically; ranks are numeric at the point and at
    ``perturbations`` nearby points, which must agree.
    """
    point = np.asarray(point, dtype=float)
    d = len(D.chart)
    if point.size != d:
        raise ValueError(f"point needs {d} coordinates")
    levels = _flag_generators(D, point, max_steps or d)
    growth = _growth_at(levels, D.chart, point)
    rng = np.random.default_rng(seed)
    for _ in range(perturbations):
        q = point + radius * rng.uniform(-1, 1, size=d)
        g = _growth_at(levels, D.chart, q)
        if g != growth:
            raise RankJumpError(f"growth vector {g} at a perturbed point differs from {growth}")
    return GrowthReport(growth, d, tuple(point.tolist()), degenerate=growth[-1] < d, stable=True)


def verify_z_symmetry(D: DistributionSpec, seed: int = 0) -> bool:
    """``d/dz`` preserves ``D`` and lies in ``D^3`` at a generic point."""
    dz = VectorField.coordinate(D.chart, Z)
    if not all(lie_bracket(dz, G).is_zero() for G in D.generators):
        return False
    point = random_point(D.chart, seed)
    levels = _flag_generators(D, point, 2)
    if len(levels) < 3:
        return False
    vals = _compile_fields(levels[2], D.chart)(point)
    ez = dz.evaluate(point)
    return _rank(np.vstack([vals, ez])) == _rank(vals)


def random_point(chart, seed: int = 0, low: float = 0.3, high: float = 1.3) -> np.ndarray:
    """A point with all coordinates in ``[low, high]`` (clear of the usual singular loci)."""
    return np.random.default_rng(seed).uniform(low, high, size=len(chart))


# ---------------------------------------------------------------------------
# abnormal extremals on the reduced chart
# ---------------------------------------------------------------------------
def reduced_chart(n: int) -> tuple:
    return (X,) + tuple(Y(i) for i in range(n + 1)) + tuple(XI(j) for j in range(n - 1))


@dataclass(frozen=True)
class AbnormalSystem:
    """Closed first-order system for abnormal extremals (``d/dt = C``)."""

    lagrangian: Lagrangian
    chart: tuple
    rhs: tuple  # components of C, one per chart coordinate
    u_star: sp.Expr
    lam: sp.Expr  # lambda from H = 0
    rho: tuple  # coefficients of the 1-form rho on the chart

    @property
    def n(self) -> int:
        return self.lagrangian.order

    @property
    def field(self) -> VectorField:
        return VectorField(self.chart, self.rhs)

    def sigma(self) -> sp.Matrix:
        """Matrix of ``d rho``: ``sigma(u, v) = u^T S v``."""
        d = len(self.chart)
        a = self.rho
        return sp.Matrix(d, d, lambda k, l: sp.expand(sp.diff(a[l], self.chart[k]) - sp.diff(a[k], self.chart[l])))


@dataclass
class AbnormalState:
    x: float
    y: tuple
    xi: tuple

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.x, *self.y, *self.xi], dtype=float)

    @classmethod
    def from_vector(cls, v, n):
        v = [float(a) for a in v]
        return cls(v[0], tuple(v[1 : n + 2]), tuple(v[n + 2 :]))

    def extension(self, system: AbnormalSystem) -> dict:
        """Full-chart values: ``xi_{n-1} = f_{y_n}``, ``xi_n = 0``, ``nu = -1`` and ``lambda`` from ``H = 0``."""
        n = system.n
        fn = compile_exprs([system.lagrangian.partial(n), system.lam], list(system.chart))
        xi_top, lam = (float(v) for v in fn(*self.vector))
        return {"xi": tuple(self.xi) + (xi_top, 0.0), "nu": -1.0, "lambda": lam}


def abnormal_extremal_ode(L: Lagrangian) -> AbnormalSystem:
    n = L.order
    if n < 2:
        raise ValueError("abnormal extremal system needs n >= 2")
    f = L.f
    fnn = L.partial(n, n)
    if fnn == 0 or is_zero(fnn) is Verdict.ZERO:
        raise DegenerateLagrangianError("f_{y_n y_n} vanishes identically: singular control")
    chart = reduced_chart(n)
    xis = [XI(j) for j in range(n - 1)]
    fyn = L.partial(n)
    xhat = sp.diff(fyn, X) + sum(Y(i + 1) * sp.diff(fyn, Y(i)) for i in range(n))
    u = (L.partial(n - 1) - xis[n - 2] - xhat) / fnn
    xidot = [L.partial(0)] + [L.partial(j) - xis[j - 1] for j in range(1, n - 1)]
    rhs = (sp.Integer(1),) + tuple(Y(i + 1) for i in range(n)) + (sp.expand(u),) + tuple(xidot)
    lam = f - sum(xis[i] * Y(i + 1) for i in range(n - 1)) - fyn * Y(n)
    rho = [lam] + [xis[i] for i in range(n - 1)] + [fyn, sp.Integer(0)] + [sp.Integer(0)] * (n - 1)
    return AbnormalSystem(L, chart, rhs, u, sp.expand(lam), tuple(rho))


def _as_system(L) -> AbnormalSystem:
    return L if isinstance(L, AbnormalSystem) else abnormal_extremal_ode(L)


def integrate_abnormal(L, init: AbnormalState | Sequence[float], grid, rtol: float = 1e-11,
                       atol: float = 1e-13, check_tol: float = 1e-8) -> Trajectory:
    """Integrate the abnormal system and audit the full-chart extension.

    ``lambda``, ``xi_{n-1}`` and ``xi_n`` are integrated with the unreduced
    adjoint equations alongside; stationarity (``xi_n = 0``,
    ``xi_{n-1} = f_{y_n}``) and transversality (``H = 0``) are then checked
    relative to the size of the quantities involved.
    """
    S = _as_system(L)
    n, f = S.n, S.lagrangian.f
    grid = np.asarray(grid, dtype=float)
    v0 = init.vector if isinstance(init, AbnormalState) else np.asarray(init, dtype=float)
    if v0.size != len(S.chart):
        raise ValueError(f"initial state needs {len(S.chart)} entries (x, y0..y{n}, xi0..xi{n - 2})")
    if abs(v0[0] - grid[0]) > 1e-14 * (1 + abs(grid[0])):
        raise ValueError("initial x must equal the first grid point")
    Lg = S.lagrangian
    # augmented: lambda' = f_x, xi_{n-1}' = f_{y_{n-1}} - xi_{n-2}, xi_n' = f_{y_n} - xi_{n-1}
    xin1, xin, lam = sp.Symbol("_xin1"), sp.Symbol("_xin"), sp.Symbol("_lam")
    extra = [sp.diff(f, X), Lg.partial(n - 1) - XI(n - 2), Lg.partial(n) - xin1]
    fn = compile_exprs(list(S.rhs[1:]) + extra, list(S.chart) + [lam, xin1, xin])
    d = len(S.chart)

    def rhs(t, s):
        return np.concatenate([[1.0], np.array([float(v) for v in fn(*s)])])

    ext = AbnormalState.from_vector(v0, n).extension(S)
    s0 = np.concatenate([v0, [ext["lambda"], ext["xi"][n - 1], 0.0]])
    sol = _integrate(rhs, s0, grid, rtol, atol, what="abnormal extremal")
    states = sol.y.T
    red = states[:, :d]
    audit = compile_exprs([Lg.partial(n), S.lam, S.u_star, f], list(S.chart))
    fyn, lamH, u, fv = (np.broadcast_to(np.asarray(v, float), (grid.size,)) for v in audit(*red.T))
    lam_i, xin1_i, xin_i = states[:, d], states[:, d + 1], states[:, d + 2]
    xi_full = [red[:, n + 2 + j] for j in range(n - 1)] + [xin1_i]
    terms = [lam_i] + [xi_full[i] * red[:, i + 2] for i in range(n)] + [xin_i * u, -fv]
    H = np.sum(terms, axis=0)
    scale = 1 + np.max(np.abs(terms))
    resid = {
        "transversality": float(np.max(np.abs(H)) / scale),
        "stationarity": float(max(np.max(np.abs(xin_i)), np.max(np.abs(xin1_i - fyn))) / (1 + np.max(np.abs(fyn)))),
        "lambda": float(np.max(np.abs(lam_i - lamH)) / (1 + np.max(np.abs(lamH)))),
        "nu": 0.0,
    }
    if max(resid.values()) > check_tol:
        raise IntegrationError(f"full-chart residuals too large: {resid}")
    labels = [f"y{i}" for i in range(n + 1)] + [f"xi{j}" for j in range(n - 1)]
    dense = sol.sol
    return Trajectory(grid, red[:, 1:].copy(), dense=lambda xs: np.asarray(dense(xs))[1:d].T,
                      meta={"residuals": resid, "kind": "abnormal", "n": n}, labels=labels)


def _states(traj: Trajectory) -> np.ndarray:
    return np.column_stack([traj.x, traj.samples])


def characteristic_kernel(L, point) -> np.ndarray:
    """Null direction of ``d rho`` at a reduced-chart point (cross-check for ``C``)."""
    S = _as_system(L)
    Sig = np.array(compile_exprs(list(S.sigma()), list(S.chart))(*point), dtype=float).reshape(len(S.chart), -1)
    _, s, Vt = np.linalg.svd(Sig)
    v = Vt[-1]
    return v / v[0] if abs(v[0]) > 1e-12 else v


# ---------------------------------------------------------------------------
# Taylor-mode flow machinery
# ---------------------------------------------------------------------------
def _stack(values, order, M):
    out = np.zeros((order + 1, M, len(values)))
    for j, v in enumerate(values):
        if isinstance(v, Series):
            k = min(order, v.order)
            out[: k + 1, :, j] = np.broadcast_to(v.c[: k + 1], (k + 1, M))
        else:
            out[0, :, j] = np.broadcast_to(np.asarray(v, dtype=float), (M,))
    return out


def _cauchy(a, b, spec):
    K = min(a.shape[0], b.shape[0])
    return np.stack([sum(np.einsum(spec, a[j], b[k - j]) for j in range(k + 1)) for k in range(K)])


def _dt(w):
    """Jets of the time derivative."""
    k = np.arange(1, w.shape[0]).reshape((-1,) + (1,) * (w.ndim - 1))
    return w[1:] * k


class FlowGeometry:
    """A vector field on a chart, compiled for jets and variational transport."""

    def __init__(self, chart, rhs, sigma: sp.Matrix | None = None):
        self.chart = tuple(chart)
        self.rhs = tuple(sp.sympify(r) for r in rhs)
        d = self.d = len(self.chart)
        self._f = compile_exprs(list(self.rhs), list(self.chart))
        jac = [sp.diff(self.rhs[k], self.chart[j]) for k in range(d) for j in range(d)]
        self._jac = compile_exprs(jac, list(self.chart))
        self._sigma = compile_exprs(list(sigma), list(self.chart)) if sigma is not None else None

    def jets(self, states, order):
        """Taylor coefficients ``[k, m, i]`` of the integral curve through each state."""
        states = np.atleast_2d(states)
        M = states.shape[0]
        c = np.zeros((order + 1, M, self.d))
        c[0] = states
        with np.errstate(all="raise"):
            for k in range(order):
                s = [Series(c[: k + 1, :, i], k) for i in range(self.d)]
                c[k + 1] = _stack(self._f(*s), k, M)[k] / (k + 1)
        return c

    def _on(self, fn, jets, width):
        K, M = jets.shape[0] - 1, jets.shape[1]
        s = [Series(jets[:, :, i], K) for i in range(self.d)]
        with np.errstate(all="raise"):
            return _stack(fn(*s), K, M).reshape(K + 1, M, *width)

    def field_jets(self, jets):
        return self._on(self._f, jets, (self.d,))

    def jacobian_jets(self, jets):
        return self._on(self._jac, jets, (self.d, self.d))

    def sigma_jets(self, jets):
        return self._on(self._sigma, jets, (self.d, self.d))

    def field(self, states):
        return _stack(self._f(*np.atleast_2d(states).T), 0, np.atleast_2d(states).shape[0])[0]

    def jacobian(self, states):
        states = np.atleast_2d(states)
        return _stack(self._jac(*states.T), 0, states.shape[0])[0].reshape(-1, self.d, self.d)

    def sigma(self, states):
        states = np.atleast_2d(states)
        return _stack(self._sigma(*states.T), 0, states.shape[0])[0].reshape(-1, self.d, self.d)

    def transport(self, state0, grid, rtol=1e-11, atol=1e-13):
        """States and variational matrices ``Psi(t)`` (``Psi' = A Psi``, ``Psi(t0) = I``)."""
        d = self.d

        def rhs(t, y):
            s = y[:d]
            P = y[d:].reshape(d, d)
            A = self.jacobian(s)[0]
            return np.concatenate([self.field(s)[0], (A @ P).ravel()])

        y0 = np.concatenate([np.asarray(state0, float), np.eye(d).ravel()])
        sol = _integrate(rhs, y0, np.asarray(grid, float), rtol, atol, what="variational")
        Y_ = sol.y.T
        return Y_[:, :d], Y_[:, d:].reshape(-1, d, d)

    def ad_jets(self, A, w):
        """Jets of ``[C, W]`` from jets of ``W`` (``A`` = Jacobian jets of ``C``)."""
        return _dt(w) - _cauchy(A, w, "mij,mj->mi")[: w.shape[0] - 1]

    def inverse_transport_jets(self, A):
        """Jets in ``h`` of ``Phi(t, t+h)^{-1}``: ``G' = -G A``, ``G(0) = I``."""
        K, M, d = A.shape[0] - 1, A.shape[1], self.d
        G = np.zeros((K + 1, M, d, d))
        G[0] = np.eye(d)
        for k in range(K):
            acc = sum(G[j] @ A[k - j] for j in range(k + 1))
            G[k + 1] = -acc / (k + 1)
        return G


def transported_curve(geom: FlowGeometry, Psi, v_jets, drop: int = 0, t=None, meta=None) -> ProjectiveCurve:
    """Curve ``t -> Psi(t)^{-1} v(t)`` in the tangent space at the start.

    ``v_jets[k, m]`` are Taylor coefficients of the transported vector field
    along the trajectory at ``t_m``; coordinate ``drop`` is removed afterwards
    (the quotient by the flow direction when ``v`` has no component there).
    """
    K, M = v_jets.shape[0] - 1, v_jets.shape[1]
    # inverse transport jets are computed by the caller and folded into v_jets
    Pinv = np.linalg.inv(Psi)
    e = np.einsum("mij,kmj->kmi", Pinv, v_jets)
    e = np.delete(e, drop, axis=2)
    n = e.shape[2]
    if K < n - 1:
        raise ValueError("not enough jets for a full frame")
    from math import factorial

    frames = np.stack([e[i] * factorial(i) for i in range(n)], axis=1)
    meta = dict(meta or {})
    meta["jets"] = e
    return ProjectiveCurve(np.arange(M, dtype=float) if t is None else t, frames, meta)


# ---------------------------------------------------------------------------
# Jacobi curves and the class
# ---------------------------------------------------------------------------
def reduced_geometry(L) -> FlowGeometry:
    S = _as_system(L)
    return FlowGeometry(S.chart, S.rhs, S.sigma())


def _fiber_fields(n: int, d: int):
    """Constant fields ``d/dy_n, d/dxi_0..d/dxi_{n-2}`` spanning ``J`` modulo ``C``."""
    idx = [n + 1] + [n + 2 + j for j in range(n - 1)]
    out = np.zeros((len(idx), d))
    for r, i in enumerate(idx):
        out[r, i] = 1.0
    return out


def _level_jets(geom: FlowGeometry, jets, n, levels):
    """Jets of ``ad_C^k V`` for fiber fields ``V`` and ``k <= levels``; list indexed by ``k``."""
    K, M = jets.shape[0] - 1, jets.shape[1]
    A = geom.jacobian_jets(jets)
    V = _fiber_fields(n, geom.d)
    w = np.zeros((K + 1, M, V.shape[0], geom.d))
    w[0] = V
    out = [w]
    for _ in range(levels):
        w = _dt(w) - _cauchy(A, w, "mij,maj->mai")[: w.shape[0] - 1]
        out.append(w)
    return out, A


def _skew_complement(vectors, Sig, rtol=RANK_RTOL):
    """Basis of ``{v: sigma(b, v) = 0 for all b}`` intersected with ``{v_x = 0}``."""
    d = Sig.shape[0]
    rows = np.vstack([np.asarray(vectors) @ Sig, np.eye(d)[:1]])
    _, s, Vt = np.linalg.svd(rows)
    r = int(np.sum(s > rtol * s[0]))
    return Vt[r:]


@dataclass
class ClassReport:
    point: tuple
    dims: dict  # level i -> dim J^(i) (J includes C)
    nu: int
    m: int
    maximal_class: bool
    samples: list = field(default_factory=list)


def _levels_at(geom, state, n):
    jets = geom.jets(state[None, :], n + 1)
    lev, _ = _level_jets(geom, jets, n, n)
    C = geom.field(state)[0]
    Sig = geom.sigma(state)[0]
    dims = {}
    vecs = [C]
    for k in range(n + 1):
        vecs = vecs + list(lev[k][0, 0])
        dims[k] = _rank(vecs)
    for k in range(1, n + 1):
        # J^(-k) = skew complement of J^(k); the complement always contains C
        pos = [C] + [v for j in range(k + 1) for v in lev[j][0, 0]]
        dims[-k] = 1 + _skew_complement(pos, Sig).shape[0]
    return dims


def distribution_class(L, point, seed: int = 0, fibers: int = 4, perturbations: int = 5,
                       radius: float = 1e-3) -> ClassReport:
    """Dimensions of ``J^(i)``, ``i = -n..n``, and the class over a base point.

    ``point`` is either ``(x, y0..yn)`` (the fiber is sampled with ``fibers``
    random ``xi``) or a full reduced-chart point.
    """
    S = _as_system(L)
    n = S.n
    geom = reduced_geometry(S)
    point = np.asarray(point, dtype=float)
    rng = np.random.default_rng(seed)
    if point.size == n + 2:
        states = [np.concatenate([point, rng.uniform(-1, 1, n - 1)]) for _ in range(fibers)]
    elif point.size == geom.d:
        states = [point]
    else:
        raise ValueError("point must be (x, y0..yn) or (x, y0..yn, xi0..xi_{n-2})")
    samples = []
    for st in states:
        try:
            dims = _levels_at(geom, st, n)
        except FloatingPointError as exc:
            raise SingularityError(f"distribution data undefined at {st}: {exc}") from exc
        for _ in range(perturbations):
            q = st + radius * rng.uniform(-1, 1, st.size)
            if _levels_at(geom, q, n) != dims:
                raise RankJumpError(f"J-filtration dimensions jump near {st.tolist()}")
        nu = next((i for i in range(n) if dims[i + 1] == dims[i]), n)
        for i in range(n):
            if dims[i + 1] - dims[i] not in (0, 1):
                raise ArithmeticError(f"J^({i + 1}) grows by more than one: {dims}")
        samples.append({"state": st.tolist(), "dims": dims, "nu": nu})
    best = max(samples, key=lambda s: s["nu"])
    m = best["nu"]
    return ClassReport(tuple(point.tolist()), best["dims"], m, m, m == n, samples)


def _greedy_columns(cands, count, rtol=RANK_RTOL):
    """Per sample, indices of ``count`` candidates that are independent (in order)."""
    M = cands.shape[0]
    out = np.zeros((M, count), dtype=int)
    for m in range(M):
        chosen = []
        for j in range(cands.shape[1]):
            trial = chosen + [j]
            if _rank(cands[m, trial], rtol) == len(trial):
                chosen = trial
                if len(chosen) == count:
                    break
        if len(chosen) < count:
            raise RegularityError("transported J-planes lose rank: extremal not of maximal class here")
        out[m] = chosen
    return out


def jacobi_curve(L, extremal: Trajectory, extra_jets: int = 4) -> ProjectiveCurve:
    """Jacobi curve of the distribution along an abnormal extremal.

    The bottom line ``J^(1-n)`` (skew complement of ``J^(n-1)``) is expanded in
    Taylor series along the extremal, transported back to the initial fiber
    with the variational flow and taken modulo ``C``; the result lives in the
    ``2n``-dimensional coordinates ``(y0..yn, xi0..xi_{n-2})``.
    """
    S = _as_system(L)
    n = S.n
    geom = reduced_geometry(S)
    d, N = geom.d, 2 * n - 1
    grid = extremal.x
    start = _states(extremal)[0]
    states, Psi = geom.transport(start, grid)
    K = 2 * N + n + extra_jets
    jets = geom.jets(states, K)
    lev, A = _level_jets(geom, jets, n, n - 1)
    Kc = lev[-1].shape[0] - 1
    cands = np.concatenate([w[: Kc + 1] for w in lev], axis=2)  # (Kc+1, M, n*n, d)
    M = states.shape[0]
    pick = _greedy_columns(cands[0], 2 * n - 1)
    B = np.take_along_axis(cands, pick[None, :, :, None], axis=2)  # (Kc+1, M, 2n-1, d)
    Sig = geom.sigma_jets(jets)[: Kc + 1]
    rows = _cauchy(B, Sig, "mai,mij->maj")  # sigma(b, .)
    # normalization rows: v_x = 0 and c . v = 1 with c the pointwise solution
    ell0 = np.empty((M, d))
    for m in range(M):
        comp = _skew_complement(B[0, m], Sig[0, m])
        if comp.shape[0] != 1:
            raise RegularityError(f"skew complement of J^(n-1) has dimension {comp.shape[0]} != 1")
        ell0[m] = comp[0]
    Mat = np.zeros((Kc + 1, M, d, d))
    Mat[:, :, : 2 * n - 1] = rows
    Mat[0, :, 2 * n - 1, 0] = 1.0
    Mat[0, :, 2 * n] = ell0
    e_last = np.zeros(d)
    e_last[-1] = 1.0
    v = np.einsum("kmij,j->kmi", matrix_inverse_jets(Mat), e_last)
    G = geom.inverse_transport_jets(A[: Kc + 1])
    Gv = _cauchy(G, v, "mij,mj->mi")
    curve = transported_curve(geom, Psi, Gv, drop=0, t=grid.copy(),
                              meta={"source": "jacobi", "n": n, "levels_used": pick[0].tolist()})
    curve.meta["psi"] = Psi
    curve.meta["states"] = states
    return curve


def jacobi_consistency(L, extremal: Trajectory, curve: ProjectiveCurve) -> float:
    """Largest subspace gap between osculating spaces and transported ``J^(i+1-n)`` (modulo ``C``)."""
    from .wilczynski import osculating_flag

    S = _as_system(L)
    n = S.n
    geom = reduced_geometry(S)
    states, Psi = curve.meta["states"], curve.meta["psi"]
    jets = geom.jets(states, n)
    lev, _ = _level_jets(geom, jets, n, n - 1)
    Pinv = np.linalg.inv(Psi)
    Sig = geom.sigma(states)
    worst = 0.0
    for i in range(2 * n - 1):
        j = i + 1 - n
        flag = osculating_flag(curve, i)
        for m in range(states.shape[0]):
            if j >= 0:
                basis = np.vstack([lev[k][0, m] for k in range(j + 1)])
            else:
                basis = _skew_complement(np.vstack([lev[k][0, m] for k in range(-j + 1)]), Sig[m])
            plane = (Pinv[m] @ basis.T)[1:]
            Q = np.linalg.svd(plane, full_matrices=False)[0][:, : _rank(plane.T)]
            if Q.shape[1] != i + 1:
                raise RegularityError(f"transported J^({j}) has dimension {Q.shape[1]} != {i + 1}")
            gap = np.linalg.norm(Q @ Q.T - flag[m] @ flag[m].T, 2)
            worst = max(worst, float(gap))
    return worst


# ---------------------------------------------------------------------------
# projective comparison
# ---------------------------------------------------------------------------
@dataclass
class ProjectiveMatch:
    A: np.ndarray
    residual: float
    matched: bool
    condition: float


def compare_projective(g1: ProjectiveCurve, g2: ProjectiveCurve, tol: float = 1e-5,
                       max_condition: float = 1e12) -> ProjectiveMatch:
    """Least-squares ``A`` with ``A e0^(1)(t)`` parallel to ``e0^(2)(t)`` for all samples."""
    if g1.N != g2.N or g1.t.size != g2.t.size:
        raise ValueError("curves must share N and the sample count")
    n = g1.N + 1
    P1 = g1.points / np.linalg.norm(g1.points, axis=1, keepdims=True)
    P2 = g2.points / np.linalg.norm(g2.points, axis=1, keepdims=True)
    rows = []
    for u1, u2 in zip(P1, P2):
        proj = np.eye(n) - np.outer(u2, u2)
        rows.append(np.kron(proj, u1[None, :]))  # acts on vec(A) row-major
    Msys = np.vstack(rows)
    _, _, Vt = np.linalg.svd(Msys, full_matrices=False)
    A = Vt[-1].reshape(n, n)
    sv = np.linalg.svd(A, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    if cond > max_condition:
        raise ProjectiveFitError(f"best projective fit is singular (condition {cond:.3g})")
    img = P1 @ A.T
    img /= np.linalg.norm(img, axis=1, keepdims=True)
    resid = float(np.max(np.linalg.norm(img - np.sum(img * P2, axis=1, keepdims=True) * P2, axis=1)))
    return ProjectiveMatch(A / np.linalg.norm(A), resid, resid < tol, cond)


def transport_linearization_curve(E, traj: Trajectory, extra_jets: int = 4) -> ProjectiveCurve:
    """Image of ``d/dy_N`` transported back along a solution of ``E`` (its ``Lin^1`` curve)."""
    N = E.N
    chart = (X,) + tuple(Y(i) for i in range(N + 1))
    rhs = (sp.Integer(1),) + tuple(Y(i + 1) for i in range(N)) + (E.rhs,)
    geom = FlowGeometry(chart, rhs)
    start = np.concatenate([[traj.x[0]], traj.samples[0]])
    states, Psi = geom.transport(start, traj.x)
    K = 2 * N + 3 + extra_jets
    jets = geom.jets(states, K)
    A = geom.jacobian_jets(jets)
    G = geom.inverse_transport_jets(A)
    v = G[:, :, :, -1]
    return transported_curve(geom, Psi, v, drop=0, t=traj.x.copy(), meta={"source": "lin1"})
