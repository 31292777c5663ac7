"""Truncated Taylor series (jets) and operations built on them.

A :class:`Jet` stores the coefficients ``c[0..N]`` of a function's
Taylor expansion at some base point.  Arithmetic and the function set of
the expression language are overloaded on jets, so an expression tree or
a compiled coefficient can be evaluated with jet arguments to read off
derivatives of any order along a curve.

On top of the arithmetic the module provides

* :func:`compose` and :func:`revert` for series composition and local
  inversion,
* :func:`ode_taylor` for Taylor coefficients of an ODE flow, and
* :func:`delta_action`, the value of ``∫ δ^(q)(g(τ)) φ(τ) dτ`` near a
  simple root of ``g`` from jets of ``g`` and ``φ`` at the root.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["Jet", "compose", "revert", "ode_taylor", "delta_action"]


class Jet:
    """Taylor coefficients ``c[m] = f^(m)(s0)/m!`` up to a fixed order."""

    __slots__ = ("c",)

    def __init__(self, coeffs):
        self.c = np.asarray(coeffs, dtype=float)
        if self.c.ndim != 1 or self.c.size == 0:
            raise ValueError("jet needs a 1-d, non-empty coefficient array")

    @property
    def order(self) -> int:
        return self.c.size - 1

    @property
    def value(self) -> float:
        return float(self.c[0])

    @classmethod
    def variable(cls, value: float, order: int) -> "Jet":
        c = np.zeros(order + 1)
        c[0] = value
        if order >= 1:
            c[1] = 1.0
        return cls(c)

    @classmethod
    def constant(cls, value: float, order: int) -> "Jet":
        c = np.zeros(order + 1)
        c[0] = value
        return cls(c)

    def derivative(self, m: int = 1) -> float:
        """m-th derivative at the base point (not the coefficient)."""
        if m > self.order:
            raise ValueError(f"jet of order {self.order} has no c[{m}]")
        return float(self.c[m]) * math.factorial(m)

    def diff(self) -> "Jet":
        """Jet of the derivative function (order drops by one)."""
        if self.order == 0:
            return Jet([0.0])
        k = np.arange(1, self.order + 1)
        return Jet(self.c[1:] * k)

    def integrate(self, constant: float = 0.0) -> "Jet":
        """Jet of an antiderivative (order grows by one)."""
        k = np.arange(1, self.order + 2)
        return Jet(np.concatenate(([constant], self.c / k)))

    def truncate(self, order: int) -> "Jet":
        if order >= self.order:
            c = np.zeros(order + 1)
            c[: self.c.size] = self.c
            return Jet(c)
        return Jet(self.c[: order + 1])

    def __repr__(self):
        return f"Jet({np.array2string(self.c, precision=6)})"

    # -- arithmetic ---------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Jet):
            if other.order != self.order:
                raise ValueError("jet orders differ")
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Jet.constant(float(other), self.order)
        return None

    def __add__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return Jet(self.c + o.c)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return Jet(self.c - o.c)

    def __rsub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return Jet(o.c - self.c)

    def __neg__(self):
        return Jet(-self.c)

    def __mul__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        n = self.order + 1
        out = np.convolve(self.c, o.c)[:n]
        return Jet(out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        if o.c[0] == 0.0:
            raise ZeroDivisionError("jet division by a jet vanishing at base")
        n = self.order
        w = np.zeros(n + 1)
        w[0] = self.c[0] / o.c[0]
        for k in range(1, n + 1):
            w[k] = (self.c[k] - np.dot(o.c[1 : k + 1], w[k - 1 :: -1])) / o.c[0]
        return Jet(w)

    def __rtruediv__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return o.__truediv__(self)

    def __pow__(self, exponent):
        if isinstance(exponent, Jet):
            # u**w = exp(w log u)
            return (exponent * self.log()).exp()
        e = float(exponent)
        if e == int(e) and abs(e) <= 64:
            m = int(e)
            if m < 0:
                return (1.0 / self) ** (-m)
            result = Jet.constant(1.0, self.order)
            base = self
            while m:
                if m & 1:
                    result = result * base
                base = base * base
                m >>= 1
            return result
        # real exponent: recurrence needs a nonzero base value
        u = self.c
        if u[0] == 0.0:
            raise ZeroDivisionError("fractional power of a jet vanishing at base")
        n = self.order
        p = np.zeros(n + 1)
        p[0] = u[0] ** e
        for k in range(1, n + 1):
            s = 0.0
            for j in range(1, k + 1):
                s += (e * j - (k - j)) * u[j] * p[k - j]
            p[k] = s / (k * u[0])
        return Jet(p)

    # -- elementary functions ------------------------------------------

    def exp(self) -> "Jet":
        u = self.c
        n = self.order
        e = np.zeros(n + 1)
        e[0] = math.exp(u[0])
        for k in range(1, n + 1):
            s = 0.0
            for j in range(1, k + 1):
                s += j * u[j] * e[k - j]
            e[k] = s / k
        return Jet(e)

    def log(self) -> "Jet":
        u = self.c
        if u[0] <= 0.0:
            raise ValueError("log of a jet with non-positive base value")
        n = self.order
        w = np.zeros(n + 1)
        w[0] = math.log(u[0])
        for k in range(1, n + 1):
            s = 0.0
            for j in range(1, k):
                s += j * w[j] * u[k - j]
            w[k] = (u[k] - s / k) / u[0]
        return Jet(w)

    def _sin_cos(self):
        u = self.c
        n = self.order
        s = np.zeros(n + 1)
        c = np.zeros(n + 1)
        s[0] = math.sin(u[0])
        c[0] = math.cos(u[0])
        for k in range(1, n + 1):
            a = 0.0
            b = 0.0
            for j in range(1, k + 1):
                a += j * u[j] * c[k - j]
                b += j * u[j] * s[k - j]
            s[k] = a / k
            c[k] = -b / k
        return Jet(s), Jet(c)

    def sin(self) -> "Jet":
        return self._sin_cos()[0]

    def cos(self) -> "Jet":
        return self._sin_cos()[1]

    def tanh(self) -> "Jet":
        u = self.c
        n = self.order
        t = np.zeros(n + 1)
        t[0] = math.tanh(u[0])
        for k in range(1, n + 1):
            s = 0.0
            for j in range(1, k + 1):
                m = k - j
                # w = 1 - t^2 needs t only up to index m <= k-1
                w = (1.0 if m == 0 else 0.0) - np.dot(t[: m + 1], t[m::-1])
                s += j * u[j] * w
            t[k] = s / k
        return Jet(t)

    def abs(self) -> "Jet":
        s = math.copysign(1.0, self.c[0]) if self.c[0] != 0.0 else 0.0
        return Jet(self.c * s)

    def sign(self) -> "Jet":
        s = math.copysign(1.0, self.c[0]) if self.c[0] != 0.0 else 0.0
        return Jet.constant(s, self.order)

    def sqrt(self) -> "Jet":
        return self ** 0.5


def compose(outer: Jet, inner: Jet) -> Jet:
    """Series composition ``f(u(s))``.

    ``outer`` holds the coefficients of ``f`` expanded at ``u(s0)``;
    ``inner`` is the jet of ``u`` in ``s``.  The constant coefficient of
    ``inner`` is ignored as the expansion point (Horner on the shifted
    series), so callers may pass either the raw jet of ``u`` or its
    increment.
    """
    n = min(outer.order, inner.order)
    du = Jet(np.concatenate(([0.0], inner.c[1 : n + 1])))
    result = Jet.constant(float(outer.c[n]), n)
    for m in range(n - 1, -1, -1):
        result = result * du + float(outer.c[m])
    return result


def revert(jet: Jet) -> Jet:
    """Local inverse series of ``y = g(s)`` with ``g(0)=0``, ``g'(0)!=0``.

    Returns the jet of ``s`` as a function of ``y`` (constant term 0).
    """
    g = jet.c
    if abs(g[0]) > 1e-12 * max(1.0, abs(g[1]) if g.size > 1 else 1.0):
        raise ValueError("reversion requires a vanishing constant term")
    if jet.order < 1 or g[1] == 0.0:
        raise ValueError("reversion requires a simple root (g'(0) != 0)")
    n = jet.order
    y = Jet.variable(0.0, n)
    tau = y / g[1]
    # fixed point tau = (y - sum_{m>=2} g_m tau^m)/g_1 gains an order per pass
    tail = Jet(np.concatenate(([0.0, 0.0], g[2:])))
    for _ in range(n):
        tau = (y - compose(tail, tau)) / g[1]
    return tau


def ode_taylor(rhs, t0: float, x0: float, order: int) -> Jet:
    """Taylor jet at ``t0`` of the solution of ``x' = rhs(x, t)``.

    ``rhs`` must accept jet arguments (compiled coefficient expressions
    do).  Each Picard pass on the truncated series fixes one more
    coefficient.
    """
    t = Jet.variable(t0, order)
    x = Jet.constant(x0, order)
    for _ in range(order):
        slope = rhs(x, t)
        if not isinstance(slope, Jet):
            slope = Jet.constant(float(slope), order)
        x = slope.truncate(order - 1).integrate(x0).truncate(order)
    return x


def delta_action(q: int, g: Jet, phi: Jet) -> float:
    """Value of ``∫ δ^(q)(g(τ)) φ(τ) dτ`` near a simple root of ``g``.

    ``g`` and ``phi`` are jets at the root ``τ*`` (so ``g.value == 0``)
    of order at least ``q + 1`` and ``q``.  Substituting ``y = g(τ)``
    turns the action into ``(-1)^q ψ^(q)(0)`` for
    ``ψ(y) = φ(τ(y)) / |g'(τ(y))|``.
    """
    if q < 0:
        raise ValueError("derivative order must be >= 0")
    if g.order < q + 1 or phi.order < q:
        raise ValueError("jets too short for the requested delta order")
    gp = g.diff()
    tau_of_y = revert(g)
    phi_y = compose(phi.truncate(q), tau_of_y).truncate(q)
    gp_y = compose(gp.truncate(q), tau_of_y).truncate(q)
    orient = math.copysign(1.0, gp.value)
    psi = phi_y / (gp_y * orient)
    return (-1.0) ** q * psi.c[q] * math.factorial(q)
