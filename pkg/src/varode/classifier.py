"""Membership in the flat class (maximally symmetric Lagrangians / equations).

Evidence is collected from three sources:
  * exact closed forms of the order-6/8 invariant and the I-invariant,
  * exact invariants when the linearization has constant coefficients,
  * invariants computed numerically along random solutions.
Numeric zeros are never promoted to exact zeros.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .expr import X, Y, Verdict, compile_exprs, is_zero, normalize, to_text, total_derivative_n
from .jets import (
    DegenerateLagrangianError,
    IntegrationError,
    Lagrangian,
    LinearODECoeffs,
    OrdODE,
    SingularityError,
    euler_lagrange,
    linearize_along,
    make_grid,
    solve_ivp,
)
from .wilczynski import (
    CanonicalFormError,
    InsufficientDataError,
    canonicalize,
    generalized_wilczynski_order6,
    generalized_wilczynski_order8,
    invariant_status,
    wilczynski_invariants,
)

R = sp.Rational

MAXIMAL = "maximally_symmetric"
NOT_MAXIMAL = "not_maximally_symmetric"
INCONCLUSIVE = "inconclusive"

SUBSCRIPT_NOTE = "W with numeric subscripts (W55, W355, ...) denotes partial derivatives of W by the jet variables y5, y3, y4, ..."


# ---------------------------------------------------------------------------
# I-invariant, extra conditions, syzygies
# ---------------------------------------------------------------------------
def _fd(L: Lagrangian, k: int):
    return sp.diff(L.f, Y(L.order), k)


def I_invariant(L: Lagrangian, E: OrdODE | None = None, check: bool = True) -> sp.Expr:
    n = L.order
    if n == 3:
        I = -3 * _fd(L, 3) / _fd(L, 2)
        pair = (4, 5)
    elif n == 4:
        I = -6 * _fd(L, 3) / _fd(L, 2)
        pair = (6, 6)
    else:
        raise ValueError("the I-invariant is defined here for n = 3 and n = 4 only")
    if _fd(L, 2) == 0:
        raise DegenerateLagrangianError("f_{y_n y_n} vanishes identically")
    I = normalize(I)
    if check:
        E = E or euler_lagrange(L)
        if is_zero(I - E.partial(*pair)) is Verdict.NONZERO:
            raise ArithmeticError(f"I disagrees with F_{pair[0]}{pair[1]} of the Euler-Lagrange equation")
    return I


def _extra_partials(n: int):
    if n == 3:
        return [(5, 5), (4, 5)]
    if n == 4:
        return [(7, 7), (6, 7), (6, 6)]
    return []


def extra_conditions(E: OrdODE, n: int) -> bool:
    """``F_55 = F_45 = 0`` (n=3), ``F_77 = F_76 = F_66 = 0`` (n=4); automatic for ``n >= 5``."""
    if E.order != 2 * n:
        raise ValueError("equation order must be 2n")
    return all(is_zero(E.partial(*p)) is Verdict.ZERO for p in _extra_partials(n))


@dataclass
class SyzygyResult:
    residual: sp.Expr
    verdict: Verdict
    closed_forms: dict  # name -> Verdict of (pipeline - closed form)
    values: dict  # name -> Expr

    @property
    def ok(self) -> bool:
        return self.verdict is not Verdict.NONZERO and all(v is not Verdict.NONZERO for v in self.closed_forms.values())


def _zero(e, tol, points):
    return is_zero(e, tol=tol, points=points)


def syzygy_check_n3(L: Lagrangian, tol: float = 1e-9, points: int = 20, E: OrdODE | None = None) -> SyzygyResult:
    if L.order != 3:
        raise ValueError("n = 3 required")
    E = E or euler_lagrange(L)
    W = generalized_wilczynski_order6(E)
    d = lambda k: _fd(L, k)  # noqa: E731
    W55 = sp.diff(W, Y(5), 2)
    W355 = sp.diff(W55, Y(3))
    W445 = sp.diff(W, Y(4), 2, Y(5), 1)
    I = I_invariant(L, E)
    closed = {
        "W55": R(1, 35) * (57 * d(3) ** 2 - 35 * d(2) * d(4)) / d(2) ** 2,
        "W355": -R(1, 35) * (35 * d(2) ** 2 * d(5) - 149 * d(2) * d(3) * d(4) + 114 * d(3) ** 3) / d(2) ** 3,
        "W445": -R(2, 35) * (35 * d(2) ** 2 * d(5) - 162 * d(2) * d(3) * d(4) + 135 * d(3) ** 3) / d(2) ** 3,
    }
    vals = {"W55": W55, "W355": W355, "W445": W445, "I": I}
    checks = {k: _zero(vals[k] - v, tol, points) for k, v in closed.items()}
    resid = 210 * W355 - 105 * W445 + 26 * I * W55 - R(4, 105) * I ** 3
    return SyzygyResult(resid, _zero(resid, tol, points), checks, vals)


def syzygy_check_n4(L: Lagrangian, tol: float = 1e-9, points: int = 20, E: OrdODE | None = None) -> SyzygyResult:
    if L.order != 4:
        raise ValueError("n = 4 required")
    E = E or euler_lagrange(L)
    W = generalized_wilczynski_order8(E)
    d = lambda k: _fd(L, k)  # noqa: E731
    W75 = sp.diff(W, Y(7), Y(5))
    W66 = sp.diff(W, Y(6), 2)
    I = I_invariant(L, E)
    closed = {
        "W75": -R(7, 66) * (8 * d(2) * d(4) - 13 * d(3) ** 2) / d(2) ** 2,
        "W66": -R(1, 198) * (252 * d(2) * d(4) - 437 * d(3) ** 2) / d(2) ** 2,
    }
    vals = {"W75": W75, "W66": W66, "I": I}
    checks = {k: _zero(vals[k] - v, tol, points) for k, v in closed.items()}
    resid = 3 * W75 - 2 * W66 + R(5, 648) * I ** 2
    return SyzygyResult(resid, _zero(resid, tol, points), checks, vals)


# ---------------------------------------------------------------------------
# numeric invariants along solutions
# ---------------------------------------------------------------------------
@dataclass
class SolutionInvariants:
    init: list
    x: np.ndarray
    values: object  # WilczynskiValues


def _rhs_ok(fn, x0, jet) -> bool:
    try:
        with np.errstate(all="raise"):
            v = float(fn(x0, *jet)[0])
    except (ZeroDivisionError, FloatingPointError, ValueError, OverflowError, ArithmeticError):
        return False
    return math.isfinite(v)


def random_solutions(E: OrdODE, seed: int = 0, count: int = 3, grid=None, attempts: int = 30,
                     margin: float = 0.05, accept=None) -> list:
    """Solutions with random initial jets in ``[-1, 1]`` that integrate cleanly over ``grid``.

    Draws near a singular locus of ``F`` (denominator below ``margin``), draws
    that fail to integrate, and draws rejected by ``accept(traj)`` (which may
    return a payload or raise) are replaced, up to ``attempts`` per solution.
    Returns ``(traj, payload)`` pairs.
    """
    grid = make_grid(0.0, 1.0, 64) if grid is None else np.asarray(grid, float)
    N = E.N
    rng = np.random.default_rng(seed)
    fn = compile_exprs([E.rhs], [X] + [Y(i) for i in range(N + 1)])
    dfn = compile_exprs([sp.denom(sp.together(E.rhs))], [X] + [Y(i) for i in range(N + 1)])
    out = []
    last_error = None
    for _ in range(count):
        for _try in range(attempts):
            init = rng.uniform(-1, 1, N + 1)
            if not _rhs_ok(fn, grid[0], init) or not _rhs_ok(dfn, grid[0], init):
                continue
            if abs(float(dfn(grid[0], *init)[0])) < margin:
                continue
            try:
                tr = solve_ivp(E, init, grid)
                payload = accept(tr) if accept else None
            except (SingularityError, IntegrationError, CanonicalFormError, InsufficientDataError,
                    FloatingPointError, ZeroDivisionError) as exc:
                last_error = exc
                continue
            if payload is False:
                continue
            out.append((tr, payload))
            break
        else:
            raise IntegrationError(f"no usable random solution after {attempts} draws: {last_error}")
    return out


def invariants_along_solutions(E: OrdODE, seed: int = 0, solutions: int = 3, grid=None,
                               attempts: int = 30) -> list:
    """Generalized invariants ``W_3..W_{N+1}`` along random solutions."""
    def invariants(tr):
        w = wilczynski_invariants(canonicalize(linearize_along(E, tr, E.N + 4)))
        if not all(np.all(np.isfinite(v)) for v in w.values.values()):
            return False
        return w

    return [SolutionInvariants(tr.samples[0].tolist(), tr.x, w)
            for tr, w in random_solutions(E, seed, solutions, grid, attempts, accept=invariants)]


def constant_coefficient_invariants(E: OrdODE):
    """Exact invariants when every ``F_{y_i}`` is a constant, else None."""
    ps = [E.partial(i) for i in range(E.N + 1)]
    if not all(p.is_number for p in ps):
        return None
    c = LinearODECoeffs.from_exprs([sp.nsimplify(p) for p in ps])
    return wilczynski_invariants(canonicalize(c))


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------
@dataclass
class Evidence:
    name: str
    status: str  # zero | nonzero | probably_zero
    witness: object = None
    decisive: bool = True

    def as_dict(self):
        return {"name": self.name, "status": self.status, "witness": self.witness, "decisive": self.decisive}


@dataclass
class ClassificationReport:
    input: str
    kind: str
    n: int
    verdict: str
    evidence: list = field(default_factory=list)
    expected_symmetry_dims: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    self_tests: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "input": self.input, "kind": self.kind, "n": self.n, "verdict": self.verdict,
            "evidence": [e.as_dict() for e in self.evidence],
            "expected_symmetry_dims": self.expected_symmetry_dims,
            "notes": list(self.notes), "self_tests": self.self_tests,
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.as_dict()), sort_keys=True, indent=2)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        return float(f"{float(v):.17g}") if math.isfinite(v) else str(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, sp.Basic):
        return to_text(v)
    return v


@dataclass
class ClassifyOptions:
    seed: int = 0
    solutions: int = 3
    grid: tuple = (0.0, 1.0, 64)
    tol: float = 1e-6
    numeric: bool = True


def _symbolic_evidence(name, expr, seed=0) -> Evidence:
    v = is_zero(expr, seed=seed)
    witness = None
    if v is Verdict.NONZERO:
        witness = to_text(normalize(expr))
    return Evidence(name, v.value, witness)


def _table_row(L: Lagrangian | None, n: int):
    """Symmetry dimensions of literal rows of the known-symmetry table."""
    if L is None:
        return None
    f = sp.expand(L.f)
    if f == Y(n) ** R(1, 3) and n == 3:
        return {"equation": 7, "lagrangian": 8, "row": "y3^(1/3)"}
    try:
        P = sp.Poly(f, *[Y(i) for i in range(n + 1)])
    except sp.PolynomialError:
        return None
    lead = P.coeff_monomial(Y(n) ** 2)
    if lead == 0 or not lead.is_number:
        return None
    others = []
    for mono, c in P.terms():
        if not c.is_number:
            return None
        nz = [i for i, e in enumerate(mono) if e]
        if len(nz) != 1 or mono[nz[0]] != 2:
            return None
        if nz[0] != n:
            others.append(c)
    if not others:
        return {"equation": 2 * n + 4, "lagrangian": 2 * n + 5, "row": "y_n^2"}
    return {"equation": 2 * n + 2, "lagrangian": 2 * n + 3, "row": "y_n^2 + sum c_i y_i^2"}


def classify(source, n: int | None = None, options: ClassifyOptions | None = None, label: str | None = None) -> ClassificationReport:
    """Decide whether a Lagrangian (or an order-2n equation) lies in the flat class."""
    opts = options or ClassifyOptions()
    if isinstance(source, Lagrangian):
        L, E, kind = source, euler_lagrange(source), "lagrangian"
        n = L.order
    elif isinstance(source, OrdODE):
        L, E, kind = None, source, "ode"
        if source.order % 2:
            raise ValueError("odd-order equations are not variational")
        n = source.order // 2
    else:
        raise TypeError("classify expects a Lagrangian or an OrdODE")
    text = label or to_text(L.f if L is not None else E.rhs)
    rep = ClassificationReport(text, kind, n, INCONCLUSIVE)
    rep.expected_symmetry_dims = {"flat_equation": 2 * n + 4, "flat_lagrangian": 2 * n + 5,
                                  "upper_bound_distribution": 2 * n + 5}
    row = _table_row(L, n)
    if row:
        rep.expected_symmetry_dims["table_row"] = row
        rep.notes.append(f"input matches the symmetry-table row {row['row']}: equation symmetry dimension {row['equation']}")

    # exact evidence
    if 2 * n == 6:
        rep.evidence.append(_symbolic_evidence("W4_closed_form", generalized_wilczynski_order6(E), opts.seed))
    elif 2 * n == 8:
        rep.evidence.append(_symbolic_evidence("W4_closed_form", generalized_wilczynski_order8(E), opts.seed))
    for p in _extra_partials(n):
        rep.evidence.append(_symbolic_evidence(f"F{p[0]}{p[1]}", E.partial(*p), opts.seed))
    if L is not None and n in (3, 4):
        I = I_invariant(L, E)
        rep.evidence.append(_symbolic_evidence("I", I, opts.seed))
        rep.notes.append(SUBSCRIPT_NOTE)
    exact = constant_coefficient_invariants(E)
    exact_names = set()
    if exact is not None:
        for k in sorted(exact.values):
            if k % 2 == 0:
                rep.evidence.append(_symbolic_evidence(f"W{k}", exact.values[k], opts.seed))
                exact_names.add(k)
            else:
                rep.self_tests[f"W{k}_exact_zero"] = is_zero(exact.values[k]) is Verdict.ZERO

    # numeric evidence along solutions
    failure = None
    if opts.numeric:
        grid = make_grid(*opts.grid[:2], int(opts.grid[2]))
        try:
            sols = invariants_along_solutions(E, opts.seed, opts.solutions, grid)
        except IntegrationError as exc:
            sols, failure = [], exc
            rep.notes.append(f"numeric stage failed: {exc}")
        if sols:
            N = E.N
            for k in range(3, N + 2):
                sup, arg, status = 0.0, None, Verdict.PROBABLY_ZERO
                for s_i, s in enumerate(sols):
                    v = np.abs(s.values.values[k])
                    m = int(np.argmax(v))
                    if v[m] >= sup:
                        sup, arg = float(v[m]), {"solution": s_i, "x": float(s.x[m]), "init": s.init}
                    if invariant_status(s.values, k, opts.tol) is Verdict.NONZERO:
                        status = Verdict.NONZERO
                if k % 2:
                    rep.self_tests[f"W{k}_odd_vanishes"] = status is not Verdict.NONZERO
                    rep.self_tests[f"W{k}_sup"] = sup
                    continue
                w = {"sup": sup, **(arg or {})}
                rep.evidence.append(Evidence(f"W{k}_along_solutions", status.value, w,
                                             decisive=k not in exact_names))
    rep.verdict = _aggregate(rep, n)
    if failure is not None and rep.verdict == INCONCLUSIVE:
        rep.notes.append("integration failure: verdict left inconclusive")
    if n == 2:
        rep.notes.append("n=2: vanishing invariants do not imply equivalence to (y'')^2 dx")
    return rep


def _aggregate(rep: ClassificationReport, n: int) -> str:
    decisive = [e for e in rep.evidence if e.decisive]
    side = [e for e in rep.evidence if not e.decisive]
    if any(e.status == "nonzero" for e in decisive):
        return NOT_MAXIMAL
    if any(e.status == "nonzero" for e in side):
        rep.notes.append("numeric and exact evidence disagree")
        return INCONCLUSIVE
    if n < 3:
        return INCONCLUSIVE
    covered = {e.name for e in decisive}
    complete = all(f"W{k}" in covered or f"W{k}_along_solutions" in covered for k in range(4, 2 * n + 1, 2))
    if not decisive or not complete:
        return INCONCLUSIVE
    if all(e.status == "zero" for e in decisive):
        return MAXIMAL
    rep.notes.append("all invariants vanish numerically (probably_zero); exact confirmation unavailable")
    return INCONCLUSIVE


def n2_caveat_demo(seed: int = 0, solutions: int = 3, tol: float = 1e-6) -> dict:
    """The second-order Lagrangian (y'')^(1/3): trivial invariants, yet not flat."""
    L = Lagrangian(2, Y(2) ** R(1, 3))
    E = euler_lagrange(L)
    expected = R(5, 3) * Y(3) ** 2 / Y(2)
    matches = is_zero(E.rhs - expected) is Verdict.ZERO
    implicit = sp.expand(3 * Y(2) * Y(4) - 5 * Y(3) ** 2)
    rep = classify(L, options=ClassifyOptions(seed=seed, solutions=solutions, tol=tol))
    sups = {}
    for s in invariants_along_solutions(E, seed, solutions):
        for k, v in s.values.values.items():
            sups[f"W{k}"] = max(sups.get(f"W{k}", 0.0), float(np.max(np.abs(v))))
    return {
        "equation": f"y4 = {to_text(E.rhs)}",
        "implicit_form": to_text(implicit) + " = 0",
        "matches_expected": bool(matches),
        "sup_invariants": sups,
        "verdict": rep.verdict,
        "notes": rep.notes,
    }
