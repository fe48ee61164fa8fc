"""Truncated Taylor series with batched coefficients.

A :class:`Series` stores coefficients ``c[k]`` of ``sum_k c[k] h**k`` valid
through ``h**order``.  Trailing axes of ``c`` are batch axes, so one object can
carry the local expansion at every sample of a grid at once.  Coefficients may
be floats or sympy expressions (object arrays); the arithmetic is the same.
"""
from __future__ import annotations

from fractions import Fraction
from math import factorial

import numpy as np


def _as_coeffs(c):
    c = np.asarray(c)
    if c.dtype.kind in "biu":
        c = c.astype(float)
    return c


class Series:
    __array_priority__ = 1000  # make numpy defer to our reflected operators

    def __init__(self, coeffs, order=None):
        coeffs = _as_coeffs(coeffs)
        if coeffs.ndim == 0:
            coeffs = coeffs[None]
        if order is None:
            order = coeffs.shape[0] - 1
        if coeffs.shape[0] < order + 1:
            pad = np.zeros((order + 1 - coeffs.shape[0],) + coeffs.shape[1:], dtype=coeffs.dtype)
            coeffs = np.concatenate([coeffs, pad])
        self.c = coeffs[: order + 1]
        self.order = order

    # -- construction -------------------------------------------------------
    @classmethod
    def constant(cls, value, order):
        value = _as_coeffs(value)
        c = np.zeros((order + 1,) + value.shape, dtype=value.dtype if value.dtype == object else float)
        c[0] = value
        return cls(c, order)

    @classmethod
    def variable(cls, order, batch_shape=()):
        """The series ``h`` itself."""
        c = np.zeros((order + 1,) + tuple(batch_shape))
        if order >= 1:
            c[1] = 1.0
        return cls(c, order)

    @classmethod
    def from_derivatives(cls, derivs):
        """Build from a stack ``[f, f', f'', ...]`` along axis 0."""
        d = _as_coeffs(derivs)
        k = d.shape[0]
        scale = np.array([1.0 / factorial(i) for i in range(k)])
        if d.dtype == object:
            from sympy import Rational

            scale = np.array([Rational(1, factorial(i)) for i in range(k)], dtype=object)
        return cls(d * scale.reshape((k,) + (1,) * (d.ndim - 1)), k - 1)

    def derivatives(self, upto=None):
        """Return ``[f(0), f'(0), ...]`` stacked along axis 0."""
        upto = self.order if upto is None else upto
        if upto > self.order:
            raise ValueError(f"series only valid to order {self.order}, asked for {upto}")
        out = self.c[: upto + 1].copy()
        for i in range(upto + 1):
            out[i] = out[i] * factorial(i)
        return out

    # -- helpers ------------------------------------------------------------
    @property
    def batch_shape(self):
        return self.c.shape[1:]

    def _lift(self, other):
        if isinstance(other, Series):
            return other
        value = _as_coeffs(other)
        if value.dtype != object or self.c.dtype == object:
            value = np.broadcast_to(value, self.batch_shape).copy() if value.shape != self.batch_shape else value
        return Series.constant(value, self.order)

    def truncate(self, order):
        return Series(self.c[: order + 1], min(order, self.order))

    def __repr__(self):
        return f"Series(order={self.order}, batch={self.batch_shape})"

    # -- arithmetic ---------------------------------------------------------
    def __neg__(self):
        return Series(-self.c, self.order)

    def __add__(self, other):
        other = self._lift(other)
        k = min(self.order, other.order)
        return Series(self.c[: k + 1] + other.c[: k + 1], k)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        if not isinstance(other, Series):
            return Series(self.c * _as_coeffs(other), self.order)
        k = min(self.order, other.order)
        a, b = self.c, other.c
        out = [sum(a[i] * b[m - i] for i in range(m + 1)) for m in range(k + 1)]
        return Series(np.stack(np.broadcast_arrays(*out)), k)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Series):
            return self * (1 / _as_coeffs(other) if _as_coeffs(other).dtype != object else _inv_obj(other))
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self._lift(other) * self.reciprocal()

    def reciprocal(self):
        a = self.c
        b = [1 / a[0] if a.dtype != object else _inv_obj(a[0])]
        for m in range(1, self.order + 1):
            s = sum(a[j] * b[m - j] for j in range(1, m + 1))
            b.append(-s * b[0])
        return Series(np.stack(np.broadcast_arrays(*b)), self.order)

    def __pow__(self, alpha):
        if isinstance(alpha, (int, np.integer)):
            return self._intpow(int(alpha))
        if isinstance(alpha, Fraction):
            if alpha.denominator == 1:
                return self._intpow(alpha.numerator)
            return self.rpow(alpha.numerator, alpha.denominator)
        alpha = float(alpha)
        if alpha.is_integer():
            return self._intpow(int(alpha))
        return self._realpow(alpha, self.c[0] ** alpha)

    def _intpow(self, p):
        if p < 0:
            return self.reciprocal()._intpow(-p)
        result = Series.constant(np.ones(self.batch_shape) if self.c.dtype != object else 1, self.order)
        base = self
        while p:
            if p & 1:
                result = result * base
            p >>= 1
            if p:
                base = base * base
        return result

    def rpow(self, p, q):
        """``self ** (p/q)`` on the principal real branch (odd ``q`` allows negative bases)."""
        if q == 1:
            return self._intpow(p)
        a0 = self.c[0]
        if self.c.dtype == object:
            from sympy import Rational

            return self._realpow(Rational(p, q), a0 ** Rational(p, q))
        a0 = np.asarray(a0, dtype=float)
        if q % 2 == 0:
            if np.any(a0 <= 0):
                raise ValueError("even-denominator power of a non-positive base")
            lead = a0 ** (p / q)
        else:
            if np.any(a0 == 0):
                raise ZeroDivisionError("rational power of a series with zero constant term")
            lead = np.sign(a0) ** (p % 2) * np.abs(a0) ** (p / q)
        return self._realpow(p / q, lead)

    def _realpow(self, alpha, lead):
        a = self.c
        b = [lead]
        for m in range(1, self.order + 1):
            s = sum((alpha * j - (m - j)) * a[j] * b[m - j] for j in range(1, m + 1))
            b.append(s / (m * a[0]))
        return Series(np.stack(np.broadcast_arrays(*b)), self.order)

    def exp(self):
        a = self.c
        if a.dtype == object:
            import sympy

            lead = np.vectorize(sympy.exp, otypes=[object])(a[0]) if np.ndim(a[0]) else sympy.exp(a[0])
        else:
            lead = np.exp(a[0])
        b = [lead]
        for m in range(1, self.order + 1):
            b.append(sum(j * a[j] * b[m - j] for j in range(1, m + 1)) / m)
        return Series(np.stack(np.broadcast_arrays(*b)), self.order)

    # -- calculus -----------------------------------------------------------
    def diff(self, times=1):
        s = self
        for _ in range(times):
            if s.order == 0:
                raise ValueError("cannot differentiate an order-0 series")
            k = np.arange(1, s.order + 1).reshape((-1,) + (1,) * (s.c.ndim - 1))
            s = Series(s.c[1:] * k, s.order - 1)
        return s

    def integrate(self):
        """Antiderivative vanishing at ``h = 0``."""
        k = np.arange(1, self.order + 2).reshape((-1,) + (1,) * (self.c.ndim - 1))
        if self.c.dtype == object:
            from sympy import Rational

            k = np.vectorize(lambda v: Rational(1, int(v)), otypes=[object])(k)
            body = self.c * k
        else:
            body = self.c / k
        zero = np.zeros_like(self.c[:1])
        return Series(np.concatenate([zero, body]), self.order + 1)

    def compose(self, inner):
        """``self(inner(h))`` for an inner series with zero constant term."""
        k = min(self.order, inner.order)
        result = Series.constant(self.c[k], k)
        inner = inner.truncate(k)
        for m in range(k - 1, -1, -1):
            result = result * inner + self.c[m]
        return result

    def value(self):
        return self.c[0]


def _inv_obj(v):
    import sympy

    if isinstance(v, np.ndarray):
        return np.vectorize(lambda e: sympy.Integer(1) / e, otypes=[object])(v)
    return sympy.Integer(1) / v



def matrix_inverse_jets(M):
    """Taylor coefficients of ``M(h)^{-1}`` from those of ``M(h)``.

    ``M`` has shape ``(K+1, ..., n, n)``; leading batch axes are kept.
    """
    M = np.asarray(M)
    X = [np.linalg.inv(M[0])]
    for k in range(1, M.shape[0]):
        acc = sum(M[j] @ X[k - j] for j in range(1, k + 1))
        X.append(-X[0] @ acc)
    return np.stack(X)


def matmul_jets(A, B):
    """Cauchy product of matrix-valued jets."""
    K = min(A.shape[0], B.shape[0])
    return np.stack([sum(A[j] @ B[k - j] for j in range(k + 1)) for k in range(K)])
