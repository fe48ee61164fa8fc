"""Generalized Legendre transform and the forms rho, omega on an Euler-Lagrange equation.

Forms are expanded in the coframe ``dx, theta_0..theta_{2n-1}`` of the
equation manifold ``{y_{2n} = F}``, with ``theta_i = dy_i - y_{i+1} dx``.
Index ``-1`` stands for ``dx``.  The structure equations are
``d theta_i = dx ^ theta_{i+1}`` (``i < 2n-1``),
``d theta_{2n-1} = sum_a F_a dx ^ theta_a`` and
``dg = D(g) dx + sum_a g_a theta_a``.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .distribution import AbnormalState, FlowGeometry, abnormal_extremal_ode
from .expr import X, Y, Verdict, compile_exprs, is_zero, jet_symbols, normalize, to_text, total_derivative_n
from .jets import Lagrangian, OrdODE, Trajectory, euler_lagrange, solution_jets
from .series import Series

DX = -1


class SupportViolation(ValueError):
    pass


class TransportError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# Legendre transform
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class LegendreData:
    n: int
    xi: tuple  # xi_0..xi_{n-1}, functions of (x, y0..y_{2n-1})

    @property
    def coordinates(self) -> tuple:
        """Image coordinates ``(x, y0..yn, xi0..xi_{n-2})`` as expressions."""
        return (X,) + tuple(Y(i) for i in range(self.n + 1)) + self.xi[: self.n - 1]

    def mapper(self):
        fn = compile_exprs(list(self.coordinates), jet_symbols(2 * self.n - 1))
        return lambda x, jet: np.array([float(v) for v in fn(x, *jet)])


def legendre_xi(L: Lagrangian) -> LegendreData:
    n = L.order
    xi = []
    for j in range(1, n + 1):
        e = sum(((-1) ** (k - j) * total_derivative_n(L.partial(k), k - j) for k in range(j, n + 1)), sp.Integer(0))
        xi.append(sp.expand(e))
    return LegendreData(n, tuple(xi))


def matched_abnormal_state(L: Lagrangian, x0: float, jet) -> AbnormalState:
    """Image of an EL initial jet ``(y0..y_{2n-1})`` on the reduced chart."""
    data = legendre_xi(L)
    return AbnormalState.from_vector(data.mapper()(x0, jet), L.order)


@dataclass
class PushforwardReport:
    residual: float
    fiberwise: bool
    tol: float

    @property
    def ok(self) -> bool:
        return self.fiberwise and self.residual < self.tol

    def __bool__(self):
        return self.ok


def legendre_pushforward_check(L: Lagrangian, gamma: Trajectory, tol: float = 1e-7,
                               E: OrdODE | None = None) -> PushforwardReport:
    """Map an EL solution through the Legendre transform and test the abnormal system on it.

    Derivatives of the image come from Taylor jets of the solution, so the
    residual measures only the numerical error of ``gamma`` itself.
    """
    n = L.order
    E = E or euler_lagrange(L)
    data = legendre_xi(L)
    system = abnormal_extremal_ode(L)
    M = gamma.x.size
    jets = solution_jets(E, gamma, 1)
    xs = Series(np.stack([gamma.x, np.ones(M)]), 1)
    ys = [Series(jets[:, :, i], 1) for i in range(2 * n)]
    img = compile_exprs(list(data.coordinates), jet_symbols(2 * n - 1))(xs, *ys)
    val = np.zeros((M, len(img)))
    der = np.zeros((M, len(img)))
    for j, s in enumerate(img):
        if isinstance(s, Series):
            val[:, j], der[:, j] = np.broadcast_to(s.c[0], (M,)), np.broadcast_to(s.c[1], (M,))
        else:
            val[:, j] = s
    fiberwise = bool(np.array_equal(val[:, 1 : n + 2], gamma.samples[:, : n + 1]))
    C = compile_exprs(list(system.rhs), list(system.chart))(*val.T)
    Cv = np.column_stack([np.broadcast_to(np.asarray(c, float), (M,)) for c in C])
    resid = float(np.max(np.abs(der - Cv)) / (1 + np.max(np.abs(Cv))))
    return PushforwardReport(resid, fiberwise, tol)


# ---------------------------------------------------------------------------
# forms in the contact coframe
# ---------------------------------------------------------------------------
def _sort_sign(idx):
    idx = list(idx)
    if len(set(idx)) < len(idx):
        return None, 0
    sign = 1
    for i in range(len(idx)):
        for j in range(len(idx) - 1 - i):
            if idx[j] > idx[j + 1]:
                idx[j], idx[j + 1] = idx[j + 1], idx[j]
                sign = -sign
    return tuple(idx), sign


@dataclass
class DifferentialForm:
    degree: int
    terms: dict = field(default_factory=dict)  # sorted index tuple -> Expr

    def __post_init__(self):
        clean = {}
        for k, v in self.terms.items():
            key, sign = _sort_sign(k)
            if key is None or len(key) != self.degree:
                if key is None:
                    continue
                raise ValueError("index tuple does not match the degree")
            clean[key] = clean.get(key, sp.Integer(0)) + sign * sp.sympify(v)
        self.terms = {k: v for k, v in clean.items() if v != 0}

    def __add__(self, other):
        if other.degree != self.degree:
            raise ValueError("degree mismatch")
        t = dict(self.terms)
        for k, v in other.terms.items():
            t[k] = t.get(k, sp.Integer(0)) + v
        return DifferentialForm(self.degree, t)

    def __neg__(self):
        return DifferentialForm(self.degree, {k: -v for k, v in self.terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def scaled(self, g):
        return DifferentialForm(self.degree, {k: g * v for k, v in self.terms.items()})

    def wedge(self, other):
        out = {}
        for (a, u), (b, v) in itertools.product(self.terms.items(), other.terms.items()):
            key, sign = _sort_sign(a + b)
            if key is not None:
                out[key] = out.get(key, sp.Integer(0)) + sign * u * v
        return DifferentialForm(self.degree + other.degree, out)

    def coefficient(self, *idx):
        key, sign = _sort_sign(idx)
        return sign * self.terms.get(key, sp.Integer(0)) if key is not None else sp.Integer(0)

    def simplified(self):
        return DifferentialForm(self.degree, {k: normalize(v) for k, v in self.terms.items()})

    def is_zero(self) -> bool:
        return all(is_zero(v) is Verdict.ZERO for v in self.terms.values())

    def contract_S(self):
        """Contraction with the solution field ``S`` (``dx(S) = 1``, ``theta(S) = 0``)."""
        out = {}
        for k, v in self.terms.items():
            if k[0] == DX:
                out[k[1:]] = v
        return DifferentialForm(self.degree - 1, out)

    def to_json(self) -> str:
        def name(i):
            return "x" if i == DX else str(i)

        table = {",".join(name(i) for i in k): to_text(v) for k, v in sorted(self.terms.items())}
        return json.dumps(table, sort_keys=True)

    def matrix(self, size):
        """Antisymmetric table of a 2-form's ``theta_i ^ theta_j`` part."""
        if self.degree != 2:
            raise ValueError("matrix() needs a 2-form")
        A = sp.zeros(size, size)
        for (i, j), v in self.terms.items():
            if i >= 0:
                A[i, j], A[j, i] = v, -v
        return A


def basis_form(*idx) -> DifferentialForm:
    return DifferentialForm(len(idx), {tuple(idx): sp.Integer(1)})


class Coframe:
    """Exterior calculus on the equation manifold of ``E``."""

    def __init__(self, E: OrdODE):
        self.E = E
        self.top = E.order - 1

    def d_function(self, g) -> DifferentialForm:
        t = {(DX,): self.E.Dx(g)}
        for a in range(self.top + 1):
            ga = sp.diff(g, Y(a))
            if ga != 0:
                t[(a,)] = ga
        return DifferentialForm(1, t)

    def d_basis(self, i) -> DifferentialForm:
        if i == DX:
            return DifferentialForm(2)
        if i < self.top:
            return basis_form(DX, i + 1)
        return DifferentialForm(2, {(DX, a): self.E.partial(a) for a in range(self.top + 1)})

    def d(self, w: DifferentialForm) -> DifferentialForm:
        out = DifferentialForm(w.degree + 1)
        for key, c in w.terms.items():
            out = out + self.d_function(c).wedge(DifferentialForm(w.degree, {key: 1}))
            for pos, i in enumerate(key):
                left = DifferentialForm(pos, {key[:pos]: (-1) ** pos}) if pos else DifferentialForm(0, {(): 1})
                right = DifferentialForm(w.degree - pos - 1, {key[pos + 1 :]: 1})
                out = out + left.wedge(self.d_basis(i)).wedge(right).scaled(c)
        return out


def rho_form(L: Lagrangian) -> DifferentialForm:
    """``f dx + sum_{i=0}^{n-2} xi_i theta_i + f_{y_n} theta_{n-1}``."""
    n = L.order
    xi = legendre_xi(L).xi
    t = {(DX,): L.f}
    for i in range(n - 1):
        t[(i,)] = xi[i]
    t[(n - 1,)] = L.partial(n)
    return DifferentialForm(1, t)


def rho_dx_coefficient(L: Lagrangian) -> sp.Expr:
    """``dx``-coefficient of rho after writing ``theta_i = dy_i - y_{i+1} dx``."""
    rho = rho_form(L)
    out = rho.terms.get((DX,), sp.Integer(0))
    for (i,), v in rho.terms.items():
        if i >= 0:
            out -= v * Y(i + 1)
    return sp.expand(out)


def omega_form(L: Lagrangian, E: OrdODE | None = None) -> DifferentialForm:
    E = E or euler_lagrange(L)
    return Coframe(E).d(rho_form(L)).simplified()


# ---------------------------------------------------------------------------
# structural checks
# ---------------------------------------------------------------------------
@dataclass
class OmegaReport:
    closed: bool
    kernel: bool
    isotropic: bool
    rank: bool
    failures: list

    @property
    def ok(self) -> bool:
        return not self.failures

    def as_dict(self):
        return {"closed": self.closed, "kernel": self.kernel, "isotropic": self.isotropic,
                "rank": self.rank, "failures": list(self.failures)}


def verify_omega_properties(L: Lagrangian, tol: float = 1e-9, omega: DifferentialForm | None = None,
                            E: OrdODE | None = None) -> OmegaReport:
    """Closedness, ``S`` as kernel, isotropy of ``V^n`` and corank one."""
    n = L.order
    E = E or euler_lagrange(L)
    w = omega if omega is not None else omega_form(L, E)
    cf = Coframe(E)
    failures = []
    dw = cf.d(w)
    closed = all(is_zero(v, tol=tol) is Verdict.ZERO for v in dw.terms.values())
    if not closed:
        failures.append("d(omega) != 0")
    iS = w.contract_S()
    # S spans the kernel and the form is S-invariant: i_S omega = 0 and i_S d(omega) = 0
    kernel = all(is_zero(v, tol=tol) is Verdict.ZERO for v in iS.terms.values()) and \
        all(is_zero(v, tol=tol) is Verdict.ZERO for v in dw.contract_S().terms.values())
    if not kernel:
        failures.append("S is not a characteristic direction of omega")
    isotropic = all(is_zero(w.coefficient(i, j), tol=tol) is Verdict.ZERO
                    for i in range(n, 2 * n) for j in range(i + 1, 2 * n))
    if not isotropic:
        failures.append("omega(V^n, V^n) != 0")
    det = w.matrix(2 * n).det(method="berkowitz")
    rank = is_zero(det, tol=tol) is Verdict.NONZERO
    if not rank:
        failures.append("theta-block of omega is degenerate (kernel larger than S)")
    return OmegaReport(closed, kernel, isotropic, rank, failures)


@dataclass
class ATCoefficients:
    n: int
    table: dict  # (i, j) -> Expr, inside the support
    leading: sp.Expr  # A_{n-1,n}


def anderson_thompson_coeffs(L: Lagrangian, tol: float = 1e-9, omega: DifferentialForm | None = None) -> ATCoefficients:
    """``A_{i,j}`` for ``0 <= i <= n-1``, ``i < j <= 2n-1-i``; everything else must vanish."""
    n = L.order
    w = omega if omega is not None else omega_form(L)
    table = {}
    for key, v in w.terms.items():
        i, j = key
        inside = i >= 0 and i <= n - 1 and i + 1 <= j <= 2 * n - i - 1
        if inside:
            table[(i, j)] = v
        elif is_zero(v, tol=tol) is not Verdict.ZERO:
            raise SupportViolation(f"coefficient of {'dx' if i < 0 else f'theta{i}'}^theta{j} is nonzero: {v}")
    lead = table.get((n - 1, n), sp.Integer(0))
    if is_zero(lead, tol=tol) is Verdict.ZERO:
        raise SupportViolation("A_{n-1,n} vanishes")
    return ATCoefficients(n, table, lead)


def variational_ansatz(E: OrdODE, n: int, degree: int = 0) -> list:
    """Closed 2-forms ``sum A_ij theta_i ^ theta_j`` with polynomial ``A_ij`` of bounded degree.

    Returns a basis of the solution space (each element a DifferentialForm).
    Only meaningful for polynomial right-hand sides.
    """
    vars_ = jet_symbols(2 * n - 1)
    monos = sorted(sp.itermonomials(vars_, degree), key=sp.default_sort_key)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, 2 * n - i)]
    unknowns = []
    terms = {}
    for p in pairs:
        expr = sp.Integer(0)
        for mono in monos:
            c = sp.Symbol(f"c_{p[0]}_{p[1]}_{len(unknowns)}")
            unknowns.append(c)
            expr += c * mono
        terms[p] = expr
    w = DifferentialForm(2, terms)
    dw = Coframe(E).d(w)
    eqs = []
    for v in dw.terms.values():
        poly = sp.Poly(sp.expand(v), *vars_)
        eqs.extend(poly.coeffs())
    Mx = sp.Matrix([[sp.diff(e, c) for c in unknowns] for e in eqs]) if eqs else sp.zeros(0, len(unknowns))
    basis = []
    for vec in Mx.nullspace():
        sub = dict(zip(unknowns, vec))
        basis.append(DifferentialForm(2, {k: sp.expand(v.subs(sub)) for k, v in terms.items()}))
    return basis


# ---------------------------------------------------------------------------
# the induced form on the solution space
# ---------------------------------------------------------------------------
def _theta_matrix(w: DifferentialForm, size: int):
    return compile_exprs(list(w.matrix(size)), jet_symbols(size - 1))


def solution_symplectic_form(L: Lagrangian, init, grid, tol: float = 1e-8, E: OrdODE | None = None,
                             checkpoints: int = 3):
    """Matrix of omega on initial data at ``grid[0]`` and its transport audit.

    Returns ``(Omega, max_transport_error)``.  Transport: for the variational
    matrix ``Phi(t)`` of the equation, ``Phi^T Omega(t) Phi`` must equal
    ``Omega(t0)``.
    """
    n = L.order
    E = E or euler_lagrange(L)
    size = 2 * n
    w = omega_form(L, E)
    fn = _theta_matrix(w, size)
    grid = np.asarray(grid, float)

    def Om(x, jet):
        return np.array([float(v) for v in fn(x, *jet)]).reshape(size, size)

    geom = _equation_geometry(E)
    states, Psi = geom.transport(np.concatenate([[grid[0]], init]), grid)
    O0 = Om(grid[0], init)
    err = 0.0
    for m in np.linspace(0, grid.size - 1, checkpoints + 1).astype(int)[1:]:
        Phi = Psi[m, 1:, 1:]
        Ot = Phi.T @ Om(states[m, 0], states[m, 1:]) @ Phi
        err = max(err, float(np.max(np.abs(Ot - O0)) / (1 + np.max(np.abs(O0)))))
    if err > tol:
        raise TransportError(f"omega is not preserved by the flow (error {err:.3g})")
    return O0, err


def _equation_geometry(E: OrdODE) -> FlowGeometry:
    N = E.N
    chart = jet_symbols(N)
    rhs = [sp.Integer(1)] + [Y(i + 1) for i in range(N)] + [E.rhs]
    return FlowGeometry(chart, rhs)


def lin_planes(E: OrdODE, init, grid, i: int) -> np.ndarray:
    """``Lin^i``: the span of ``d/dy_{N-i+1}..d/dy_N`` transported back to initial data; ``(M, N+1, i)``."""
    geom = _equation_geometry(E)
    _, Psi = geom.transport(np.concatenate([[grid[0]], init]), grid)
    Phi_inv = np.linalg.inv(Psi[:, 1:, 1:])
    return Phi_inv[:, :, E.N + 1 - i :]
