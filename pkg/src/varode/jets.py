"""Lagrangians, their Euler-Lagrange equations, and solutions along which we linearize."""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.integrate
import sympy as sp

from .series import Series
from .expr import (
    X,
    Y,
    JetContext,
    Verdict,
    as_expr,
    compile_exprs,
    is_zero,
    jet_order,
    normalize,
    total_derivative,
    total_derivative_n,
)


class DegenerateLagrangianError(ValueError):
    pass


class SingularityError(ArithmeticError):
    """The right-hand side is undefined at the current state."""


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Lagrangian:
    """Density ``f(x, y0, ..., yn)`` of the functional ``int f dx``."""

    order: int
    density: sp.Expr

    def __post_init__(self):
        object.__setattr__(self, "density", as_expr(self.density))
        if self.order < 1:
            raise ValueError("Lagrangian order must be positive")
        if jet_order(self.density) > self.order:
            raise ValueError(f"density depends on jets above y{self.order}")

    @property
    def f(self):
        return self.density

    def partial(self, *idx: int) -> sp.Expr:
        e = self.density
        for i in idx:
            e = sp.diff(e, Y(i))
        return e


@dataclass(frozen=True)
class OrdODE:
    """The equation ``y_order = rhs(x, y0, ..., y_{order-1})``."""

    order: int
    rhs: sp.Expr
    implicit: sp.Expr | None = None  # set when the EL equation could not be solved for the top jet

    def __post_init__(self):
        object.__setattr__(self, "rhs", as_expr(self.rhs))
        if self.order < 2:
            raise ValueError("ODE order must be >= 2")
        if jet_order(self.rhs) >= self.order:
            raise ValueError(f"rhs depends on y{jet_order(self.rhs)} >= y{self.order}")

    @property
    def N(self) -> int:
        return self.order - 1

    @property
    def context(self) -> JetContext:
        return JetContext.on_equation(self.order, self.rhs)

    def partial(self, *idx: int) -> sp.Expr:
        e = self.rhs
        for i in idx:
            e = sp.diff(e, Y(i))
        return e

    def Dx(self, e: sp.Expr, times: int = 1) -> sp.Expr:
        """Total derivative restricted to the equation manifold."""
        return total_derivative_n(e, times, self.context)


# ---------------------------------------------------------------------------
# Euler-Lagrange operator
# ---------------------------------------------------------------------------
def euler_lagrange_expression(L: Lagrangian) -> sp.Expr:
    """``sum_k (-1)^k D_x^k f_{y_k}``, unsolved."""
    out = sp.Integer(0)
    for k in range(L.order + 1):
        out += (-1) ** k * total_derivative_n(L.partial(k), k)
    return out


def euler_lagrange(L: Lagrangian) -> OrdODE:
    n = L.order
    E = euler_lagrange_expression(L)
    top = Y(2 * n)
    coeff = sp.diff(E, top)
    if coeff == 0 or is_zero(coeff) is Verdict.ZERO:
        raise DegenerateLagrangianError("coefficient of the top jet vanishes identically")
    rest = sp.expand(E - coeff * top)
    if rest.has(top):
        # E is affine in y_{2n} by construction; this is a guard, not a code path we expect
        return OrdODE(2 * n, sp.Integer(0), implicit=E)
    F = sp.expand(normalize(-rest / coeff))
    return OrdODE(2 * n, F)


class Nondegeneracy(str, enum.Enum):
    OK = "ok"
    DEGENERATE = "degenerate"
    LINEAR_IN_TOP = "linear_in_top"


def check_nondegenerate(L: Lagrangian) -> Nondegeneracy:
    f_nn = L.partial(L.order, L.order)
    v = is_zero(f_nn)
    if v is Verdict.ZERO:
        return Nondegeneracy.LINEAR_IN_TOP
    if v is Verdict.PROBABLY_ZERO:
        return Nondegeneracy.DEGENERATE
    return Nondegeneracy.OK


@dataclass
class WeightReport:
    is_polynomial_in_high_jets: bool
    weighted_degree: int | None
    passed: bool
    witness: str | None = None


def weighted_degree_check(E: OrdODE, n: int) -> WeightReport:
    """Degree of ``F`` in ``y_{n+1}..y_{2n-1}`` with weights ``1..n-1``; must be ``<= n``."""
    if E.order != 2 * n:
        raise ValueError(f"expected an equation of order {2 * n}, got {E.order}")
    gens = [Y(n + w) for w in range(1, n)]
    F = sp.expand(E.rhs)
    if F == 0:
        return WeightReport(True, 0, True)
    best = 0
    for term in sp.Add.make_args(F):
        deg = 0
        for g_, w in zip(gens, range(1, n)):
            d = sp.degree(term, g_) if term.has(g_) else 0
            if not term.has(g_):
                continue
            if not term.is_polynomial(g_):
                return WeightReport(False, None, False, witness=str(term))
            deg += w * int(d)
        if deg > best:
            best = deg
            witness = str(term)
    if best > n:
        return WeightReport(True, best, False, witness=witness)
    return WeightReport(True, best, True)


def divergence_shift(L: Lagrangian, g) -> Lagrangian:
    g = as_expr(g)
    if jet_order(g) > L.order - 1:
        raise ValueError(f"divergence potential must have order <= {L.order - 1}")
    return Lagrangian(L.order, L.density + total_derivative(g))


# ---------------------------------------------------------------------------
# numerical solutions
# ---------------------------------------------------------------------------
@dataclass
class Trajectory:
    """Samples of the jet ``(y0..yN)`` of one solution on a grid."""

    x: np.ndarray
    samples: np.ndarray  # shape (M, N+1)
    dense: Callable | None = None  # x -> state, vectorized over x
    meta: dict = field(default_factory=dict)
    labels: Sequence[str] | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.samples = np.asarray(self.samples, dtype=float)
        if self.x.ndim != 1 or np.any(np.diff(self.x) <= 0):
            raise ValueError("grid must be strictly increasing")
        if self.samples.shape[0] != self.x.size:
            raise ValueError("one sample per grid point required")

    @property
    def N(self) -> int:
        return self.samples.shape[1] - 1

    def state(self, x):
        if self.dense is None:
            raise ValueError("trajectory has no dense output")
        return self.dense(x)

    def to_csv(self) -> str:
        labels = list(self.labels) if self.labels else [f"y{i}" for i in range(self.samples.shape[1])]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x"] + labels)
        for xv, row in zip(self.x, self.samples):
            w.writerow([repr(float(xv))] + [repr(float(v)) for v in row])
        return buf.getvalue()


def make_grid(x0: float, x1: float, count: int) -> np.ndarray:
    if count < 2 or not x1 > x0:
        raise ValueError("grid needs x1 > x0 and at least two points")
    return np.linspace(x0, x1, count)


def _integrate(rhs, y0, grid, rtol, atol, what="ODE"):
    def guarded(t, y):
        try:
            with np.errstate(all="raise"):
                d = rhs(t, y)
        except (ZeroDivisionError, FloatingPointError, ArithmeticError, ValueError) as exc:
            raise SingularityError(f"{what} right-hand side undefined at x={t:.6g}: {exc}") from exc
        if not np.all(np.isfinite(d)):
            raise SingularityError(f"{what} right-hand side not finite at x={t:.6g}")
        return d

    guarded(grid[0], np.asarray(y0, dtype=float))
    sol = scipy.integrate.solve_ivp(
        guarded, (grid[0], grid[-1]), np.asarray(y0, dtype=float), method="DOP853",
        t_eval=grid, dense_output=True, rtol=rtol, atol=atol,
    )
    if sol.status != 0:
        raise IntegrationError(f"{what} integration failed: {sol.message}")
    return sol


def solve_ivp(E: OrdODE, init: Sequence[float], grid: Sequence[float], rtol: float = 1e-10,
              atol: float = 1e-12) -> Trajectory:
    """Integrate ``E`` from the jet ``init = (y0..yN)`` at ``grid[0]``."""
    grid = np.asarray(grid, dtype=float)
    N = E.N
    if len(init) != N + 1:
        raise ValueError(f"need {N + 1} initial jet values")
    fn = compile_exprs([E.rhs], [X] + [Y(i) for i in range(N + 1)])

    def rhs(t, y):
        return np.concatenate([y[1:], [fn(t, *y)[0]]])

    sol = _integrate(rhs, init, grid, rtol, atol)
    dense = sol.sol
    return Trajectory(grid, sol.y.T.copy(), dense=lambda xs: dense(xs).T if np.ndim(xs) else dense(xs),
                      meta={"rtol": rtol, "atol": atol, "method": "DOP853", "nfev": int(sol.nfev)})


def ode_residual(E: OrdODE, traj: Trajectory, points: Sequence[float], h: float = 1e-3) -> np.ndarray:
    """``|y_N' - F|`` at ``points``, with ``y_N'`` from a five-point stencil of the dense output."""
    fn = compile_exprs([E.rhs], [X] + [Y(i) for i in range(E.N + 1)])
    out = []
    for p in points:
        s = [traj.state(p + k * h)[E.N] for k in (-2, -1, 1, 2)]
        d = (s[0] - 8 * s[1] + 8 * s[2] - s[3]) / (12 * h)
        out.append(abs(d - fn(p, *traj.state(p))[0]))
    return np.asarray(out)


# ---------------------------------------------------------------------------
# linearization
# ---------------------------------------------------------------------------
@dataclass
class LinearODECoeffs:
    """Coefficients of ``e^(N+1) = sum_i p_i e^(i)``.

    ``exprs`` holds symbolic coefficients in ``t``; otherwise ``stack[i, k, m]``
    is ``p_i^(k)`` at ``t[m]`` and ``func(t)`` returns the values ``p_i(t)``.
    """

    N: int
    exprs: list | None = None
    t: np.ndarray | None = None
    stack: np.ndarray | None = None
    func: Callable | None = None
    meta: dict = field(default_factory=dict)
    jet_exprs: list | None = None  # local derivative jets, set by canonicalization

    def __post_init__(self):
        if self.exprs is not None:
            self.exprs = [sp.sympify(e) for e in self.exprs]
            if len(self.exprs) != self.N + 1:
                raise ValueError("need N+1 coefficients")
        elif self.stack is None:
            raise ValueError("either exprs or a derivative stack is required")
        else:
            self.stack = np.asarray(self.stack, dtype=float)
            if self.stack.shape[0] != self.N + 1:
                raise ValueError("stack must have N+1 rows")

    @property
    def symbolic(self) -> bool:
        return self.exprs is not None

    @classmethod
    def from_exprs(cls, exprs, var=None):
        var = var or sp.Symbol("t", real=True)
        exprs = [sp.sympify(e) for e in exprs]
        return cls(N=len(exprs) - 1, exprs=[e.subs(var, sp.Symbol("t", real=True)) for e in exprs])

    def sampled(self, t: Sequence[float], derivatives: int) -> "LinearODECoeffs":
        """Numeric derivative stack of symbolic coefficients on ``t``."""
        if not self.symbolic:
            return self
        from .expr import T

        t = np.asarray(t, dtype=float)
        stack = np.zeros((self.N + 1, derivatives + 1, t.size))
        for i, e in enumerate(self.exprs):
            cur = e
            for k in range(derivatives + 1):
                fn = compile_exprs([cur], [T])
                stack[i, k] = np.broadcast_to(fn(t)[0], t.shape)
                cur = sp.diff(cur, T)
        vals = compile_exprs(self.exprs, [T])
        return LinearODECoeffs(self.N, t=t, stack=stack,
                               func=lambda s: np.array([float(v) for v in vals(float(s))]))

    def derivative_order(self) -> int:
        return self.stack.shape[1] - 1


def solution_jets(E: OrdODE, traj: Trajectory, order: int) -> np.ndarray:
    """Taylor coefficients ``[k, m, i]`` of ``y_i(x_m + h)`` through ``h^order``.

    Generated from the equation by the recursion ``y_i[k+1] = y_{i+1}[k]/(k+1)``,
    ``y_N[k+1] = F[k]/(k+1)`` with ``F`` evaluated on truncated series.
    """
    N, M = E.N, traj.x.size
    fn = compile_exprs([E.rhs], [X] + [Y(i) for i in range(N + 1)])
    c = np.zeros((order + 1, M, N + 1))
    c[0] = traj.samples
    xs = Series(np.stack([traj.x, np.ones(M)]), 1)
    for k in range(order):
        ys = [Series(c[: k + 1, :, i], k) for i in range(N + 1)]
        Fs = fn(Series(xs.c, k), *ys)[0]
        Fk = Fs.c[k] if isinstance(Fs, Series) else (Fs if k == 0 else 0.0)
        c[k + 1, :, :N] = c[k, :, 1:] / (k + 1)
        c[k + 1, :, N] = Fk / (k + 1)
    return c


def linearize_along(E: OrdODE, traj: Trajectory, derivatives: int | None = None,
                    method: str = "taylor") -> LinearODECoeffs:
    """Coefficients ``p_i = F_{y_i}`` of the linearization along ``traj``.

    ``stack[i, k, m]`` is ``D_x^k(F_{y_i})`` at ``x_m`` restricted to the
    equation.  ``method="taylor"`` propagates the solution's jet through the
    equation and evaluates ``F_{y_i}`` on it; ``method="symbolic"`` expands the
    total derivatives first (exact but prone to expression swell).
    """
    N = E.N
    K = N if derivatives is None else derivatives
    variables = [X] + [Y(i) for i in range(N + 1)]
    M = traj.x.size
    stack = np.zeros((N + 1, K + 1, M))
    try:
        with np.errstate(all="raise"):
            if method == "symbolic":
                ctx = E.context
                exprs = []
                for i in range(N + 1):
                    cur = E.partial(i)
                    exprs.append(cur)
                    for _ in range(K):
                        cur = total_derivative(cur, ctx)
                        exprs.append(cur)
                raw = compile_exprs(exprs, variables)(traj.x, *traj.samples.T)
                for i in range(N + 1):
                    for k in range(K + 1):
                        stack[i, k] = np.broadcast_to(np.asarray(raw[i * (K + 1) + k], dtype=float), (M,))
            elif method == "taylor":
                jets = solution_jets(E, traj, K)
                xs = Series(np.stack([traj.x, np.ones(M)] + [np.zeros(M)] * (K - 1)), K)
                ys = [Series(jets[:, :, i], K) for i in range(N + 1)]
                raw = compile_exprs([E.partial(i) for i in range(N + 1)], variables)(xs, *ys)
                for i, r in enumerate(raw):
                    if isinstance(r, Series):
                        stack[i] = r.derivatives(K)
                    else:
                        stack[i, 0] = r
            else:
                raise ValueError(f"unknown method {method!r}")
    except (ZeroDivisionError, FloatingPointError, ArithmeticError) as exc:
        raise SingularityError(f"linearization undefined along the solution: {exc}") from exc
    if not np.all(np.isfinite(stack)):
        raise SingularityError("linearization coefficients not finite along the solution")
    pfn = compile_exprs([E.partial(i) for i in range(N + 1)], variables)

    def func(s):
        state = traj.state(s)
        return np.array([float(v) for v in pfn(s, *state)])

    return LinearODECoeffs(N, t=traj.x.copy(), stack=stack, func=func,
                           meta={"source": "linearization", "method": method})
