"""Expressions over jet coordinates.

Expressions are plain sympy objects built from the symbols below.  This module
adds what the rest of the package needs on top of sympy: a small grammar for
user input (with error offsets), a printer back into that grammar, truncated
total derivatives, normalization, a probabilistic zero test and a compiled
numeric evaluator that also accepts :class:`~varode.series.Series` arguments.
"""
from __future__ import annotations

import enum
import math
import random
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import sympy as sp

from .series import Series

X = sp.Symbol("x", real=True)
Z = sp.Symbol("z", real=True)
T = sp.Symbol("t", real=True)
NU = sp.Symbol("nu", real=True)
LAM = sp.Symbol("lambda", real=True)


@lru_cache(maxsize=None)
def Y(i: int) -> sp.Symbol:
    """Jet coordinate ``y_i`` (``y_0`` is the dependent variable)."""
    if i < 0:
        raise ValueError("jet index must be nonnegative")
    return sp.Symbol(f"y{i}", real=True)


@lru_cache(maxsize=None)
def XI(i: int) -> sp.Symbol:
    if i < 0:
        raise ValueError("xi index must be nonnegative")
    return sp.Symbol(f"xi{i}", real=True)


_JET_RE = re.compile(r"^y(\d+)$")


def jet_index(sym) -> int | None:
    m = _JET_RE.match(getattr(sym, "name", ""))
    return int(m.group(1)) if m else None


def jet_order(e: sp.Expr) -> int:
    """Highest ``i`` with ``y_i`` free in ``e`` (-1 if none)."""
    idx = [jet_index(s) for s in e.free_symbols]
    idx = [i for i in idx if i is not None]
    return max(idx, default=-1)


@dataclass(frozen=True)
class JetContext:
    """Coordinate bookkeeping for total derivatives.

    ``top_substitution=(k, F)`` restricts to the equation manifold ``y_k = F``:
    wherever ``D_x`` would produce ``y_k`` it produces ``F`` instead.
    """

    max_jet_order: int
    lagrangian_order: int | None = None
    ode_order: int | None = None
    top_substitution: tuple[int, sp.Expr] | None = None

    def __post_init__(self):
        if self.max_jet_order < 0:
            raise ValueError("max_jet_order must be nonnegative")
        if self.lagrangian_order is not None and self.lagrangian_order < 2:
            raise ValueError("lagrangian order must be >= 2")
        if self.ode_order is not None and self.ode_order < 2:
            raise ValueError("ODE order must be >= 2")
        if self.top_substitution is not None:
            k, _ = self.top_substitution
            if k != self.max_jet_order + 1:
                raise ValueError("top substitution must replace y_{max_jet_order+1}")

    @classmethod
    def on_equation(cls, order: int, rhs: sp.Expr) -> "JetContext":
        """Context of the equation ``y_order = rhs``."""
        return cls(max_jet_order=order - 1, ode_order=order, top_substitution=(order, sp.sympify(rhs)))


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------
class ParseError(ValueError):
    def __init__(self, message: str, offset: int, text: str = ""):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset
        self.text = text


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d+)?)|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str):
    pos = 0
    toks = []
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        start = m.start(kind)
        toks.append((kind, m.group(kind), start))
        pos = m.end()
    toks.append(("end", "", len(text)))
    return toks


def _ident_symbol(name: str, offset: int, text: str) -> sp.Symbol:
    if name == "x":
        return X
    if name == "z":
        return Z
    if name == "t":
        return T
    if name == "nu":
        return NU
    if name == "lambda":
        return LAM
    m = re.fullmatch(r"y(\d+)", name)
    if m:
        return Y(int(m.group(1)))
    m = re.fullmatch(r"xi(\d+)", name)
    if m:
        return XI(int(m.group(1)))
    raise ParseError(f"unknown identifier {name!r}", offset, text)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, val, off = self.take()
        if kind != "op" or val != op:
            raise ParseError(f"expected {op!r}", off, self.text)

    def error(self, msg):
        raise ParseError(msg, self.peek()[2], self.text)

    def parse(self):
        e = self.expr()
        if self.peek()[0] != "end":
            self.error("unexpected token")
        return e

    def expr(self):
        e = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            rhs = self.term()
            e = e + rhs if op == "+" else e - rhs
        return e

    def term(self):
        e = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            rhs = self.unary()
            e = e * rhs if op == "*" else e / rhs
        return e

    def unary(self):
        if self.peek() == ("op", "-", self.peek()[2]):
            self.take()
            return -self.factor()
        return self.factor()

    def factor(self):
        base = self.base()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            base = base ** self.exponent()
        return base

    def _integer(self, signed=False):
        neg = False
        if signed and self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            neg = True
        kind, val, off = self.peek()
        if kind != "num":
            self.error("expected an integer exponent")
        if "." in val:
            raise ParseError("exponent not an exact rational", off, self.text)
        self.take()
        return -int(val) if neg else int(val)

    def exponent(self):
        kind, val, off = self.peek()
        if kind == "op" and val == "(":
            self.take()
            num = self._integer(signed=True)
            den = 1
            if self.peek()[0] == "op" and self.peek()[1] == "/":
                self.take()
                den = self._integer()
                if den == 0:
                    raise ParseError("zero denominator in exponent", self.toks[self.i - 1][2], self.text)
            self.expect_op(")")
            return sp.Rational(num, den)
        if kind == "op" and val == "-":
            return sp.Integer(self._integer(signed=True))
        if kind == "num":
            return sp.Integer(self._integer())
        self.error("expected an exponent")

    def base(self):
        kind, val, off = self.take()
        if kind == "num":
            return sp.Rational(Fraction(val))
        if kind == "ident":
            return _ident_symbol(val, off, self.text)
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        raise ParseError("expected a number, identifier or '('", off, self.text)


def parse_expr(text: str) -> sp.Expr:
    """Parse ``text`` in the expression grammar (``y3^(1/3)``, ``x*y0 + 2``...)."""
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# printing
# ---------------------------------------------------------------------------
def _fmt_rational(r: sp.Rational) -> str:
    if r.q == 1:
        return str(r.p)
    return f"({r.p}/{r.q})"


def _fmt_atom_power(b, ex) -> str:
    bs = to_text(b)
    if not (b.is_Symbol or (b.is_Integer and b >= 0)):
        bs = f"({bs})"
    if ex == 1:
        return bs
    ex = sp.Rational(ex)
    es = str(ex.p) if ex.q == 1 and ex >= 0 else f"({ex.p}/{ex.q})" if ex.q != 1 else f"({ex.p})"
    return f"{bs}^{es}"


def _fmt_term(t: sp.Expr) -> str:
    coeff, rest = t.as_coeff_Mul()
    num, den = [], []
    for f in sp.Mul.make_args(rest):
        if f == 1:
            continue
        b, ex = f.as_base_exp()
        if ex.is_Rational and ex < 0:
            den.append(_fmt_atom_power(b, -ex))
        elif ex.is_Rational:
            num.append(_fmt_atom_power(b, ex))
        else:
            raise ValueError(f"cannot print non-rational exponent {ex}")
    sign = "-" if coeff < 0 else ""
    c = abs(sp.Rational(coeff))
    parts = [] if (c == 1 and num) else [_fmt_rational(c)]
    body = "*".join(parts + num) if (parts or num) else "1"
    if den:
        body += "/" + "/".join(den)
    return sign + body


def to_text(e: sp.Expr) -> str:
    """Print in the input grammar, so that ``parse_expr(to_text(e)) == e``."""
    e = sp.sympify(e)
    if e.is_Rational:
        s = _fmt_rational(abs(e))
        return ("-" if e < 0 else "") + s
    if e.is_Symbol:
        return e.name
    if e.is_Add:
        terms = e.as_ordered_terms()
        out = _fmt_term(terms[0])
        for t in terms[1:]:
            s = _fmt_term(t)
            out += " - " + s[1:] if s.startswith("-") else " + " + s
        return out
    if e.is_Mul or e.is_Pow:
        return _fmt_term(e)
    raise ValueError(f"unsupported for exact mode: {e}")


# ---------------------------------------------------------------------------
# calculus
# ---------------------------------------------------------------------------
def diff(e: sp.Expr, v: sp.Symbol, times: int = 1) -> sp.Expr:
    return sp.diff(e, v, times)


def total_derivative(e: sp.Expr, ctx: JetContext | None = None) -> sp.Expr:
    """``D_x e = e_x + sum_i y_{i+1} e_{y_i}``, restricted to ``ctx``'s equation if any."""
    e = sp.sympify(e)
    sub = ctx.top_substitution if ctx is not None else None
    out = sp.diff(e, X)
    for s in e.free_symbols:
        i = jet_index(s)
        if i is None:
            continue
        nxt = sub[1] if (sub is not None and i + 1 == sub[0]) else Y(i + 1)
        out += nxt * sp.diff(e, s)
    return out


def total_derivative_n(e: sp.Expr, k: int, ctx: JetContext | None = None) -> sp.Expr:
    for _ in range(k):
        e = total_derivative(e, ctx)
    return e


def normalize(e: sp.Expr) -> sp.Expr:
    """Canonical rational form; rational powers are combined on the positive domain."""
    e = sp.sympify(e)
    if e.is_number:
        return sp.nsimplify(e) if e.is_Float else e
    e = sp.powdenest(e, force=True)
    e = sp.cancel(sp.together(e))
    num, den = sp.fraction(e)
    return sp.expand(num) / sp.expand(den)


class Verdict(str, enum.Enum):
    ZERO = "zero"
    NONZERO = "nonzero"
    PROBABLY_ZERO = "probably_zero"


class IndeterminateError(ArithmeticError):
    """Every probe point of a zero test hit a singularity."""


_NORMALIZE_OPS_LIMIT = 3000


def is_zero(
    e: sp.Expr,
    tol: float = 1e-9,
    seed: int = 0,
    points: int = 8,
    symbolic: bool = True,
    domain: tuple[float, float] = (0.3, 1.7),
) -> Verdict:
    """Decide whether ``e`` vanishes identically.

    Symbolic normalization is tried first (skipped for very large inputs);
    otherwise ``e`` is probed at random points of ``domain`` and its value is
    compared against ``tol * (1 + scale)`` with ``scale`` the largest value of a
    top-level summand.  A clean probe yields ``probably_zero``, never ``zero``.
    """
    e = sp.sympify(e)
    if e == 0:
        return Verdict.ZERO
    if symbolic and sp.count_ops(e) <= _NORMALIZE_OPS_LIMIT:
        if normalize(e) == 0:
            return Verdict.ZERO
        if e.is_number:
            return Verdict.NONZERO
    syms = sorted(e.free_symbols, key=lambda s: s.name)
    terms = list(sp.Add.make_args(e))
    fn = compile_exprs(terms, syms)
    rng = random.Random(seed)
    lo, hi = domain
    good = 0
    attempts = 0
    while good < points and attempts < 20 * points:
        attempts += 1
        vals = [Fraction(rng.randint(int(lo * 1000), int(hi * 1000)), 1000) for _ in syms]
        try:
            with np.errstate(all="raise"):
                parts = [float(v) for v in fn(*[float(v) for v in vals])]
        except (ZeroDivisionError, FloatingPointError, ValueError, OverflowError):
            continue
        if not all(math.isfinite(p) for p in parts):
            continue
        good += 1
        total = math.fsum(parts)
        scale = max(abs(p) for p in parts)
        if abs(total) > tol * (1 + scale):
            return Verdict.NONZERO
    if good == 0:
        raise IndeterminateError("all probe points hit singularities")
    return Verdict.PROBABLY_ZERO


# ---------------------------------------------------------------------------
# numeric evaluation
# ---------------------------------------------------------------------------
class EvaluationError(ArithmeticError):
    pass


def _rpow(base, p, q):
    """Principal real branch of ``base**(p/q)``; odd ``q`` extends to negative bases."""
    if isinstance(base, Series):
        return base.rpow(p, q)
    b = np.asarray(base, dtype=float)
    if q % 2 == 0:
        if np.any(b < 0):
            raise EvaluationError("negative base with even-denominator exponent")
        with np.errstate(divide="raise"):
            out = b ** (p / q)
    else:
        with np.errstate(divide="raise"):
            out = np.sign(b) ** (p % 2) * np.abs(b) ** (p / q)
    return out if np.ndim(out) else float(out)


def _ipow(base, p):
    if isinstance(base, Series):
        return base ** int(p)
    if p < 0:
        b = np.asarray(base, dtype=float)
        if np.any(b == 0):
            raise ZeroDivisionError("division by zero")
        return 1.0 / b ** (-p) if np.ndim(b) else 1.0 / float(b) ** (-p)
    return base ** p


def _code(e: sp.Expr, names: Mapping[sp.Symbol, str]) -> str:
    if e.is_Symbol:
        return names[e]
    if e.is_Integer:
        return f"{int(e)}.0"
    if e.is_Rational:
        return repr(float(e))
    if e.is_Float:
        return repr(float(e))
    if e.is_Add:
        return "(" + " + ".join(_code(a, names) for a in e.args) + ")"
    if e.is_Mul:
        num, den = [], []
        for a in e.args:
            b, ex = a.as_base_exp()
            if ex.is_Integer and ex < 0:
                den.append(_code(b ** (-ex), names))
            else:
                num.append(_code(a, names))
        s = " * ".join(num) if num else "1.0"
        if den:
            s = f"({s}) / ({' * '.join(den)})"
        return f"({s})"
    if e.is_Pow:
        b, ex = e.args
        if ex.is_Integer:
            return f"_ipow({_code(b, names)}, {int(ex)})"
        if ex.is_Rational:
            return f"_rpow({_code(b, names)}, {ex.p}, {ex.q})"
        raise EvaluationError(f"non-rational exponent in {e}")
    if isinstance(e, sp.exp):
        return f"_exp({_code(e.args[0], names)})"
    if isinstance(e, sp.log):
        return f"_log({_code(e.args[0], names)})"
    if isinstance(e, sp.sin):
        return f"_sin({_code(e.args[0], names)})"
    if isinstance(e, sp.cos):
        return f"_cos({_code(e.args[0], names)})"
    if e is sp.pi:
        return repr(math.pi)
    if e is sp.E:
        return repr(math.e)
    raise EvaluationError(f"cannot compile {type(e).__name__}: {e}")


def _exp(v):
    return v.exp() if isinstance(v, Series) else np.exp(v)


def _needs_series(v):
    if isinstance(v, Series):
        raise EvaluationError("transcendental functions are not supported on series")
    return v


_ENV = {
    "_rpow": _rpow,
    "_ipow": _ipow,
    "_exp": _exp,
    "_log": lambda v: np.log(_needs_series(v)),
    "_sin": lambda v: np.sin(_needs_series(v)),
    "_cos": lambda v: np.cos(_needs_series(v)),
}


def compile_exprs(exprs: Sequence[sp.Expr], variables: Sequence[sp.Symbol]) -> Callable:
    """Compile ``exprs`` to ``f(*values) -> list``; values may be floats, arrays or Series."""
    exprs = [sp.sympify(e) for e in exprs]
    names = {v: f"a{i}" for i, v in enumerate(variables)}
    missing = set().union(*(e.free_symbols for e in exprs)) - set(names) if exprs else set()
    if missing:
        raise EvaluationError(f"unassigned variables: {sorted(map(str, missing))}")
    repl, reduced = sp.cse(exprs, optimizations=None, order="none")
    lines = [f"def _f({', '.join(names[v] for v in variables)}):"]
    local = dict(names)
    for i, (sym, sub) in enumerate(repl):
        nm = f"c{i}"
        lines.append(f"    {nm} = {_code(sub, local)}")
        local[sym] = nm
    lines.append("    return [" + ", ".join(_code(e, local) for e in reduced) + "]")
    src = "\n".join(lines)
    env = dict(_ENV)
    exec(compile(src, "<varode-compiled>", "exec"), env)
    return env["_f"]


def eval_numeric(e: sp.Expr, point: Mapping) -> float:
    """Evaluate ``e`` at ``point`` (keys: symbols or their names)."""
    e = sp.sympify(e)
    byname = {}
    for k, v in point.items():
        byname[k.name if isinstance(k, sp.Symbol) else str(k)] = v
    syms = sorted(e.free_symbols, key=lambda s: s.name)
    missing = [s.name for s in syms if s.name not in byname]
    if missing:
        raise EvaluationError(f"unassigned variables: {missing}")
    fn = compile_exprs([e], syms)
    try:
        with np.errstate(all="raise"):
            val = fn(*[np.float64(byname[s.name]) for s in syms])[0]
    except (ZeroDivisionError, FloatingPointError) as exc:
        raise ZeroDivisionError(f"division by zero evaluating {e}") from exc
    val = float(val)
    if not math.isfinite(val):
        raise ZeroDivisionError(f"non-finite value evaluating {e}")
    return val


def jet_symbols(k: int) -> list[sp.Symbol]:
    """``[x, y0, ..., yk]``."""
    return [X] + [Y(i) for i in range(k + 1)]


def as_expr(value) -> sp.Expr:
    if isinstance(value, str):
        return parse_expr(value)
    return sp.sympify(value)


def free_jets(e: sp.Expr) -> Iterable[int]:
    return sorted(i for i in (jet_index(s) for s in sp.sympify(e).free_symbols) if i is not None)
