"""Point singularities in the initial data.

The solution splits into a singular part carried by characteristic
curves and a regular remainder.  The singular part is a finite family
of atoms a_q(t) delta^(q)(x - X(t)) whose amplitude jets solve a closed
linear ODE system along the carrier; hitting a wall re-emits atoms on
the components the matrix part of the wall law couples in.  The
remainder is solved by the continuous machinery with the transversal
crossings of foreign carriers entering as point-source terms, and the
wall nonlinearity shifted by the already-known linear-part trace.

Every distributional manipulation reduces to truncated Taylor algebra:
``delta_action`` from the jets module evaluates pairings against
delta^(q) composed with a curve, which covers the wall composition, its
inversion, and the crossing terms uniformly in the derivative order.
"""

from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .characteristics import CharCurve, trace_characteristic
from .expressions import Const, Expr, parse
from .jets import Jet, delta_action, ode_taylor
from .problem import ProblemSpec, ensure_validated
from .solver import (
    Callables,
    SolutionGrid,
    _bottom_from_exprs,
    callables_from_spec,
    solve_kernel,
)

__all__ = [
    "DeltaWaveError",
    "Mollifier",
    "SingularAtom",
    "JSets",
    "DeltaWaveDecomposition",
    "amplitude_matrix",
    "solve_singular",
    "compute_J_sets",
    "solve_regular",
    "mollified_initial",
    "mollified_solutions",
    "delta_wave",
]

TOL_P = 1e-9  # wall-matrix entry counts as an edge above this
DEPTH_MAX = 64
RASTER_RES = 256


class DeltaWaveError(RuntimeError):
    """Singular-part construction failed or was asked the impossible."""


# ---------------------------------------------------------------------------
# mollifier


class Mollifier:
    """The normalized bump exp(-1/(1-s^2)) on (-1, 1).

    Derivatives come from the expression tree, the normalization from
    adaptive quadrature.  ``scaled(eps, l)`` is (d/dx)^l of the unit-mass
    rescaling (1/eps) phi(x/eps).
    """

    def __init__(self, order_max: int = 6):
        self.order_max = int(order_max)
        self._derivs = [parse("exp(-1/(1 - x*x))")]
        for _ in range(self.order_max):
            self._derivs.append(self._derivs[-1].diff("x"))
        mass, err = quad(
            lambda s: math.exp(-1.0 / (1.0 - s * s)) if abs(s) < 1 else 0.0,
            -1.0,
            1.0,
            epsabs=1e-15,
            epsrel=1e-14,
            limit=200,
            full_output=1,
        )[:2]
        if err > 1e-12:
            raise DeltaWaveError("mollifier normalization quadrature too loose")
        self.norm = 1.0 / mass

    def profile(self, s, order: int = 0):
        if order > self.order_max:
            raise ValueError(f"profile derivatives prepared up to {self.order_max}")
        s = np.asarray(s, dtype=float)
        out = np.zeros(s.shape if s.shape else (1,))
        flat = np.atleast_1d(s)
        inside = np.abs(flat) < 1.0 - 1e-12
        if inside.any():
            vals = self._derivs[order].evaluate({"x": flat[inside]})
            out[inside] = self.norm * np.asarray(vals, dtype=float)
        return out if s.shape else out.reshape(())

    def __call__(self, s):
        return self.profile(s, 0)

    def moment(self, p: int, order: int = 0) -> float:
        """``int phi^(order)(s) s^p / p! ds`` (=(−1)^l delta_pl for p<=l)."""
        fac = math.factorial(p)
        val = quad(
            lambda s: float(self.profile(s, order)) * s**p / fac,
            -1.0,
            1.0,
            epsabs=1e-13,
            epsrel=1e-12,
            limit=200,
            full_output=1,
        )[0]
        return val

    def scaled(self, eps: float, order: int = 0):
        eps = float(eps)
        if eps <= 0:
            raise ValueError("scale must be positive")

        def f(x):
            return eps ** (-1 - order) * self.profile(np.asarray(x) / eps, order)

        return f


# ---------------------------------------------------------------------------
# amplitude jets along a carrier


def _x_jet(expr: Expr, x: float, t: float, order: int) -> Jet:
    out = expr.evaluate({"x": Jet.variable(float(x), order), "t": float(t)})
    if not isinstance(out, Jet):
        out = Jet.constant(float(out), order)
    return out


def _dx_trees(expr: Expr, count: int):
    trees = [expr]
    for _ in range(count):
        trees.append(trees[-1].diff("x"))
    return trees


def _k_matrix(lam_jet: Jet, d_jet: Jet, l: int) -> np.ndarray:
    K = np.zeros((l + 1, l + 1))
    for m in range(l + 1):
        for q in range(m + 1):
            lam_term = (
                (-1.0) ** (m + 1 - q)
                * math.comb(m + 1, m + 1 - q)
                * lam_jet.derivative(m + 1 - q)
            )
            d_term = (
                (-1.0) ** (m - q)
                * math.comb(m, m - q)
                * d_jet.derivative(m - q)
            )
            K[q, m] = -(lam_term + d_term)
    return K


def amplitude_matrix(lam, d, x: float, t: float, l: int) -> np.ndarray:
    """ODE matrix of the amplitude jets: a'(t) = K(t) a(t).

    Row q balances the delta^(q) coefficient after substituting
    ``sum_m a_m(t) delta^(m)(x - X(t))`` into the scalar equation with
    speed ``lam`` and zero-order coefficient ``d``, expanding smooth
    factors by ``f(x) d^(m)(x-c) = sum_p (-1)^p C(m,p) f^(p)(c) d^(m-p)``.
    """
    lam = parse(lam) if isinstance(lam, str) else lam
    d = parse(d) if isinstance(d, str) else d
    return _k_matrix(_x_jet(lam, x, t, l + 1), _x_jet(d, x, t, l), l)


def _integrate_amplitudes(spec: ProblemSpec, i: int, curve: CharCurve, init):
    l = len(init) - 1
    lam = spec.lam[i - 1]
    d = spec.A[i - 1][i - 1]
    taus, xis = curve.taus, curve.xis

    def K_at(x, t):
        return _k_matrix(_x_jet(lam, x, t, l + 1), _x_jet(d, x, t, l), l)

    amps = np.zeros((l + 1, taus.size))
    amps[:, 0] = init
    for s in range(taus.size - 1):
        h = taus[s + 1] - taus[s]
        if h <= 0:
            amps[:, s + 1] = amps[:, s]
            continue
        tm = taus[s] + 0.5 * h
        xm = float(curve.xi(tm))
        K1 = K_at(xis[s], taus[s])
        Km = K_at(xm, tm)
        K2 = K_at(xis[s + 1], taus[s + 1])
        a = amps[:, s]
        k1 = K1 @ a
        k2 = Km @ (a + 0.5 * h * k1)
        k3 = Km @ (a + 0.5 * h * k2)
        k4 = K2 @ (a + h * k3)
        amps[:, s + 1] = a + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return amps


@dataclass
class SingularAtom:
    """One carried singularity ``sum_q a_q(t) delta^(q)(x - X(t))``."""

    component: int  # 1-based
    order: int
    curve: CharCurve
    taus: np.ndarray
    amps: np.ndarray  # (order+1, taus.size)
    generation: int = 0
    parent: int | None = None

    def position(self, t):
        return self.curve.xi(t)

    def _pos_extended(self, t: float) -> float:
        t0, t1 = float(self.taus[0]), float(self.taus[-1])
        if t <= t1:
            return float(self.curve.xi(max(t, t0)))
        # slide the mollified tail out along the exit slope
        return float(self.curve.x_exit) + float(self.curve.slopes[-1]) * (t - t1)

    def amplitude(self, t, q: int = 0):
        return np.interp(t, self.taus, self.amps[q])

    def mollified(self, moll: Mollifier, eps: float):
        """Callable (x, t) -> the eps-regularized atom profile."""

        def f(x, t):
            x = np.asarray(x, dtype=float)
            t = float(t)
            if t < self.taus[0]:
                return np.zeros(x.shape)
            X = self._pos_extended(t)
            tc = min(max(t, float(self.taus[0])), float(self.taus[-1]))
            out = np.zeros(x.shape)
            for q in range(self.order + 1):
                a = float(self.amplitude(tc, q))
                if a:
                    out += a * eps ** (-1 - q) * moll.profile((x - X) / eps, q)
            return out

        return f

    def pairing(self, psi) -> float:
        """Exact ``<atom, psi>`` over the strip: t-quadrature of the
        x-derivatives of psi along the carrier."""
        expr = parse(psi) if isinstance(psi, str) else psi
        vals = np.zeros(self.taus.size)
        for s, (tau, xi) in enumerate(zip(self.taus, self.curve.xis)):
            pj = _x_jet(expr, xi, tau, self.order)
            acc = 0.0
            for q in range(self.order + 1):
                acc += self.amps[q, s] * (-1.0) ** q * pj.derivative(q)
            vals[s] = acc
        return float(np.trapezoid(vals, self.taus))


# ---------------------------------------------------------------------------
# wall-law matrix part


def _p_entry(spec: ProblemSpec, j: int, i: int):
    """Coefficient multiplying trace v_i in the wall law of component j.

    Returns ("const", value) or ("expr", tree of t); zero for laws with
    no matrix part toward that pair.
    """
    bc = spec.boundary
    k = spec.k
    if bc.kind == "linear_reflection":
        if j > k and i <= k:
            return ("const", float(bc.B[j - k - 1][i - 1]))
        if j <= k and i > k:
            return ("const", float(bc.C[j - 1][i - k - 1]))
        return ("const", 0.0)
    if bc.kind == "linear_nonlocal":
        entry = bc.p[j - 1][i - 1]
        if isinstance(entry, Const):
            return ("const", float(entry.value))
        return ("expr", entry)
    return ("const", 0.0)  # classical and general laws carry no matrix part


def _p_value(entry, t: float) -> float:
    kind, payload = entry
    if kind == "const":
        return payload
    return float(payload.evaluate({"t": float(t)}))


def _p_jet(entry, t: float, order: int) -> Jet:
    kind, payload = entry
    if kind == "const":
        return Jet.constant(payload, order)
    out = payload.evaluate({"t": Jet.variable(float(t), order)})
    return out if isinstance(out, Jet) else Jet.constant(float(out), order)


def _linear_gradient_bound(spec: ProblemSpec) -> float:
    best = 0.0
    for j in range(1, spec.n + 1):
        for t in np.linspace(0.0, spec.t_max, 9):
            row = sum(
                abs(_p_value(_p_entry(spec, j, i), t)) for i in range(1, spec.n + 1)
            )
            best = max(best, row)
    return best


# ---------------------------------------------------------------------------
# wall re-emission by jet composition


def _amp_jets(spec: ProblemSpec, i: int, x0: float, t0: float, l: int, init, N: int):
    """Taylor jets (in t at t0) of the carrier and its amplitude vector."""
    lam = spec.lam[i - 1]
    d = spec.A[i - 1][i - 1]

    def rhs(x, t):
        out = lam.evaluate({"x": x, "t": t})
        return out if isinstance(out, Jet) else Jet.constant(float(out), N)

    X = ode_taylor(rhs, t0, x0, N)
    tj = Jet.variable(t0, N)
    lam_dx = _dx_trees(lam, l + 1)
    d_dx = _dx_trees(d, l)

    def as_jet(expr):
        out = expr.evaluate({"x": X, "t": tj})
        return out if isinstance(out, Jet) else Jet.constant(float(out), N)

    K = [[None] * (l + 1) for _ in range(l + 1)]
    for m in range(l + 1):
        for q in range(m + 1):
            lam_term = as_jet(lam_dx[m + 1 - q]) * (
                (-1.0) ** (m + 1 - q) * math.comb(m + 1, m + 1 - q)
            )
            d_term = as_jet(d_dx[m - q]) * (
                (-1.0) ** (m - q) * math.comb(m, m - q)
            )
            K[q][m] = -(lam_term + d_term)
    a = [Jet.constant(float(init[q]), N) for q in range(l + 1)]
    for _ in range(N):
        nxt = []
        for q in range(l + 1):
            slope = Jet.constant(0.0, N)
            for m in range(q, l + 1):
                slope = slope + K[q][m] * a[m]
            nxt.append(slope.truncate(N - 1).integrate(float(init[q])).truncate(N))
        a = nxt
    return X, a


def _monomial(s: int, N: int) -> Jet:
    c = np.zeros(N + 1)
    c[s] = 1.0 / math.factorial(s)
    return Jet(c)


def _emit(spec: ProblemSpec, atom: SingularAtom, t_star: float, j: int, entry):
    """Amplitude vector of the atom re-emitted on component j at t_star.

    The incoming trace is composed through the wall-hit time change,
    multiplied by the wall coefficient, and matched against the trace of
    an undetermined outgoing atom; matching monomial test functions
    gives a square linear system for the new amplitudes.
    """
    i = atom.component
    l = atom.order
    N = l + 3
    x_out = spec.outflow_wall(i)
    init = [float(atom.amplitude(t_star, q)) for q in range(l + 1)]
    X_i, a_jets = _amp_jets(spec, i, x_out, t_star, l, init, N)
    G_i = Jet.constant(x_out, N) - X_i
    p_jet = _p_jet(entry, t_star, N)

    data = np.zeros(l + 1)
    for s in range(l + 1):
        psi = _monomial(s, N)
        acc = 0.0
        for q in range(l + 1):
            acc += delta_action(q, G_i, a_jets[q] * p_jet * psi)
        data[s] = acc

    x_in = spec.inflow_wall(j)
    X_j = ode_taylor(
        lambda x, t: _coerce_jet(spec.lam[j - 1].evaluate({"x": x, "t": t}), N),
        t_star,
        x_in,
        N,
    )
    G_j = Jet.constant(x_in, N) - X_j
    M = np.zeros((l + 1, l + 1))
    for m0 in range(l + 1):
        unit = [1.0 if q == m0 else 0.0 for q in range(l + 1)]
        _, phi = _amp_jets(spec, j, x_in, t_star, l, unit, N)
        for s in range(l + 1):
            M[s, m0] = sum(
                delta_action(q, G_j, phi[q] * _monomial(s, N)) for q in range(l + 1)
            )
    return np.linalg.solve(M, data)


def _coerce_jet(value, order: int) -> Jet:
    return value if isinstance(value, Jet) else Jet.constant(float(value), order)


# ---------------------------------------------------------------------------
# singular part


def _reject_nonaffine(spec: ProblemSpec):
    if spec.boundary.kind == "general_nonlinear" and spec.initial.atoms:
        raise DeltaWaveError(
            "singular initial data needs a wall law with an explicit matrix "
            "part plus bounded remainder; the general law admits no "
            "distributional trace"
        )


def solve_singular(
    spec: ProblemSpec,
    horizon: float | None = None,
    depth_max: int = DEPTH_MAX,
    tol: float = TOL_P,
) -> list:
    """Transport every declared atom, re-emitting at wall hits.

    Returns atoms in breadth-first order; ``parent`` indexes into the
    returned list.  Raises on generation overflow instead of silently
    truncating an endless bounce.
    """
    ensure_validated(spec)
    _reject_nonaffine(spec)
    horizon = spec.t_max if horizon is None else min(float(horizon), spec.t_max)
    out = []
    work = deque()
    for a in spec.initial.atoms:
        init = np.zeros(a.l + 1)
        init[a.l] = a.c
        work.append((a.i, float(a.xstar), 0.0, init, 0, None))
    while work:
        i, x0, t0, init, gen, parent = work.popleft()
        curve = trace_characteristic(spec, i, (x0, t0), direction="forward")
        amps = _integrate_amplitudes(spec, i, curve, init)
        atom = SingularAtom(
            component=i,
            order=len(init) - 1,
            curve=curve,
            taus=curve.taus.copy(),
            amps=amps,
            generation=gen,
            parent=parent,
        )
        out.append(atom)
        idx = len(out) - 1
        t_star = curve.t_exit
        if curve.side not in ("x=0", "x=1") or t_star >= horizon - 1e-12:
            continue
        targets = [
            j
            for j in range(1, spec.n + 1)
            if abs(_p_value(_p_entry(spec, j, i), t_star)) > tol
        ]
        if targets and gen + 1 >= depth_max:
            raise DeltaWaveError(
                f"generation overflow: atom bounce exceeded depth {depth_max} "
                f"before t = {horizon:g}"
            )
        scale = max(1.0, float(np.max(np.abs(amps))))
        for j in targets:
            b = _emit(spec, atom, t_star, j, _p_entry(spec, j, i))
            if np.max(np.abs(b)) <= 1e-14 * scale:
                continue
            work.append((j, spec.inflow_wall(j), t_star, b, gen + 1, idx))
    return out


# ---------------------------------------------------------------------------
# skeleton sets


@dataclass
class JSets:
    """Raster masks of the singular skeleton and its thickenings."""

    centers: np.ndarray
    ts: np.ndarray
    dx: float
    dt: float
    horizon: float
    j_star: np.ndarray  # (rows, P) carriers only
    j: np.ndarray  # all expansion legs from the atom points
    j_eps: dict
    legs_star: list  # (component, CharCurve)
    legs: list


def _ep_legs(spec, seeds, horizon, depth_max, tol):
    legs = []
    work = deque((i, float(x), float(t), 0) for (i, x, t) in seeds)
    while work:
        i, x0, t0, depth = work.popleft()
        curve = trace_characteristic(spec, i, (x0, t0), direction="forward")
        legs.append((i, curve))
        t_star = curve.t_exit
        if curve.side not in ("x=0", "x=1") or t_star >= horizon - 1e-12:
            continue
        targets = [
            j
            for j in range(1, spec.n + 1)
            if abs(_p_value(_p_entry(spec, j, i), t_star)) > tol
        ]
        if targets and depth + 1 >= depth_max:
            raise DeltaWaveError(
                f"skeleton tracing inconclusive: reflection depth {depth_max} "
                "exhausted before the horizon"
            )
        for j in targets:
            work.append((j, spec.inflow_wall(j), t_star, depth + 1))
    return legs


def _leg_positions(curve: CharCurve, ts: np.ndarray):
    """Curve positions at the raster rows it spans (row indices, x's)."""
    t0 = float(min(curve.taus[0], curve.taus[-1]))
    t1 = float(max(curve.taus[0], curve.taus[-1]))
    dt = ts[1] - ts[0]
    r_lo = int(math.ceil((t0 - 1e-12) / dt))
    r_hi = int(math.floor((t1 + 1e-12) / dt))
    r_lo, r_hi = max(r_lo, 0), min(r_hi, ts.size - 1)
    if r_hi < r_lo:
        return np.arange(0), np.arange(0)
    rows = np.arange(r_lo, r_hi + 1)
    xs = curve.xi(np.clip(ts[rows], t0, t1))
    return rows, np.asarray(xs)


def _paint_legs(mask, legs, ts, dx):
    P = mask.shape[1]
    for _, curve in legs:
        rows, xs = _leg_positions(curve, ts)
        if rows.size == 0:
            continue
        cells = np.clip(np.floor(xs / dx).astype(int), 0, P - 1)
        mask[rows, cells] = True
        for a, b in zip(range(rows.size - 1), range(1, rows.size)):
            lo, hi = sorted((cells[a], cells[b]))
            mask[rows[b], lo : hi + 1] = True


def _fill_between(mask, legs_lo, legs_hi, ts, dx):
    P = mask.shape[1]
    for (_, clo), (_, chi) in zip(legs_lo, legs_hi):
        r_lo, x_lo = _leg_positions(clo, ts)
        r_hi, x_hi = _leg_positions(chi, ts)
        if r_lo.size == 0 or r_hi.size == 0:
            continue
        start = max(r_lo[0], r_hi[0])
        stop = min(r_lo[-1], r_hi[-1])
        for r in range(start, stop + 1):
            a = x_lo[r - r_lo[0]]
            b = x_hi[r - r_hi[0]]
            lo, hi = sorted((a, b))
            c0 = max(0, int(np.floor(lo / dx)))
            c1 = min(P - 1, int(np.floor(hi / dx)))
            mask[r, c0 : c1 + 1] = True


def compute_J_sets(
    spec: ProblemSpec,
    horizon: float | None = None,
    eps_list=(),
    resolution: int = RASTER_RES,
    depth_max: int = DEPTH_MAX,
    tol: float = TOL_P,
) -> JSets:
    """Raster the carrier skeleton, the full expansion skeleton, and
    the eps-thickened tubes traced from the shifted atom positions."""
    ensure_validated(spec)
    _reject_nonaffine(spec)
    atoms = spec.initial.atoms
    if not atoms:
        raise DeltaWaveError("the problem declares no singular atoms")
    horizon = spec.t_max if horizon is None else min(float(horizon), spec.t_max)
    P = int(resolution)
    dx = 1.0 / P
    centers = (np.arange(P) + 0.5) * dx
    lam_max = 1.0
    probe = np.linspace(0.0, 1.0, 33)
    for e in spec.lam:
        for t in np.linspace(0.0, horizon, 9):
            lam_max = max(
                lam_max, float(np.max(np.abs(e.evaluate({"x": probe, "t": t}))))
            )
    rows = max(2, int(math.ceil(horizon * lam_max / dx)) + 1)
    ts = np.linspace(0.0, horizon, rows)
    dt = float(ts[1] - ts[0])

    legs_star = _ep_legs(
        spec, [(a.i, a.xstar, 0.0) for a in atoms], horizon, depth_max, tol
    )
    legs = _ep_legs(
        spec,
        [(j, a.xstar, 0.0) for a in atoms for j in range(1, spec.n + 1)],
        horizon,
        depth_max,
        tol,
    )
    j_star = np.zeros((rows, P), dtype=bool)
    j_full = np.zeros((rows, P), dtype=bool)
    _paint_legs(j_star, legs_star, ts, dx)
    _paint_legs(j_full, legs, ts, dx)

    j_eps = {}
    for eps in eps_list:
        eps = float(eps)
        tube = np.zeros((rows, P), dtype=bool)
        for a in atoms:
            lo = _ep_legs(
                spec,
                [(a.i, np.clip(a.xstar - eps, 1e-9, 1 - 1e-9), 0.0)],
                horizon,
                depth_max,
                tol,
            )
            hi = _ep_legs(
                spec,
                [(a.i, np.clip(a.xstar + eps, 1e-9, 1 - 1e-9), 0.0)],
                horizon,
                depth_max,
                tol,
            )
            _paint_legs(tube, lo, ts, dx)
            _paint_legs(tube, hi, ts, dx)
            _fill_between(tube, lo, hi, ts, dx)
        tube |= j_star
        j_eps[eps] = tube

    return JSets(
        centers=centers,
        ts=ts,
        dx=dx,
        dt=dt,
        horizon=horizon,
        j_star=j_star,
        j=j_full,
        j_eps=j_eps,
        legs_star=legs_star,
        legs=legs,
    )


# ---------------------------------------------------------------------------
# regular remainder


def _zero_xt(x, t):
    return np.zeros(np.shape(x)) if np.ndim(x) else 0.0


def _diag_only(cb: Callables):
    A = [
        [cb.A[i][j] if i == j else _zero_xt for j in range(cb.n)]
        for i in range(cb.n)
    ]
    return A


def _matrix_h(spec: ProblemSpec):
    """Wall laws reduced to their matrix part, kernel-shaped."""
    entries = [
        [_p_entry(spec, i, j) for j in range(1, spec.n + 1)]
        for i in range(1, spec.n + 1)
    ]

    def make(i):
        row = entries[i - 1]

        def h(t, v):
            v = np.asarray(v, dtype=float)
            acc = np.zeros(v.shape[1:]) if v.ndim > 1 else 0.0
            for j, entry in enumerate(row):
                pv = _p_value(entry, t)
                if pv:
                    acc = acc + pv * v[j]
            return acc

        return h

    return [make(i) for i in range(1, spec.n + 1)]


def _remainder_h(spec: ProblemSpec, cb: Callables, vbar_at):
    """Full law minus its matrix part, evaluated at a shifted trace,
    plus the matrix part at the unshifted one."""
    bc = spec.boundary
    matrix = _matrix_h(spec)

    def make(i):
        mh = matrix[i - 1]

        def h(t, v):
            v = np.asarray(v, dtype=float)
            shift = vbar_at(t)
            if v.ndim > 1:
                shifted = v + shift[:, None]
            else:
                shifted = v + shift
            if bc.kind == "classical":
                r = cb.h[i - 1](t, shifted)  # ignores the trace anyway
            elif bc.kind == "linear_reflection":
                r = 0.0
            elif bc.kind == "linear_nonlocal":
                env = {"t": t}
                for j in range(spec.n):
                    env[f"v{j + 1}"] = shifted[j]
                r = bc.r[i - 1].evaluate(env)
            else:  # general nonlinear, reachable only without atoms
                r = cb.h[i - 1](t, shifted)
            return mh(t, v) + r

        return h

    return [make(i) for i in range(1, spec.n + 1)]


def _crossing_extra(spec: ProblemSpec, atoms, xs, ts, cb: Callables):
    """Point-source row injections from carriers crossing the backward
    characteristics of other components."""
    n = spec.n
    NX = xs.size - 1
    dt = float(ts[1] - ts[0])
    table = {}
    for atom in atoms:
        isrc = atom.component
        birth, death = float(atom.taus[0]), float(atom.taus[-1])
        for rec in range(1, n + 1):
            if rec == isrc:
                continue
            f_expr = spec.A[rec - 1][isrc - 1]
            if isinstance(f_expr, Const) and f_expr.value == 0.0:
                continue
            bc_col = NX if rec <= spec.k else 0
            for r in range(1, ts.size):
                t_lo, t_hi = float(ts[r - 1]), float(ts[r])
                ta, tb = max(t_lo, birth), min(t_hi, death)
                if tb <= ta + 1e-15:
                    continue
                lam_here = cb.lam[rec - 1](xs, t_hi)
                xa = xs - lam_here * (t_hi - ta)
                xb = xs - lam_here * (t_hi - tb)
                pa = float(atom.position(ta))
                pb = float(atom.position(tb))
                da = xa - pa
                db = xb - pb
                hit = (da * db < 0) | ((db == 0) & (da != 0))
                hit[bc_col] = False
                idxs = np.where(hit)[0]
                if idxs.size == 0:
                    continue
                arr = table.setdefault((rec - 1, r), np.zeros(xs.size))
                for p in idxs:
                    denom = db[p] - da[p]
                    frac = -da[p] / denom if denom else 0.5
                    tau = ta + frac * (tb - ta)
                    arr[p] += _crossing_value(spec, cb, atom, rec, tau, t_hi)

    def extra(i0, q):
        return table.get((i0, q))

    return extra


def _crossing_value(spec, cb, atom, rec, tau, t_row):
    """One transversal crossing: -sum_q <delta^(q) along the gap curve,
    E * f * a_q>, all jets taken at the crossing time."""
    isrc = atom.component
    l = atom.order
    N = l + 2
    x_hat = float(atom.position(tau))

    init = [float(atom.amplitude(tau, q)) for q in range(l + 1)]
    X_i, a_jets = _amp_jets(spec, isrc, x_hat, tau, l, init, N)
    X_j = ode_taylor(
        lambda x, t: _coerce_jet(spec.lam[rec - 1].evaluate({"x": x, "t": t}), N),
        tau,
        x_hat,
        N,
    )
    gap = X_j - X_i
    if abs(gap.derivative(1)) < 1e-9:
        raise DeltaWaveError(
            f"tangent crossing of components {rec} and {isrc} at "
            f"({x_hat:.4g}, {tau:.4g})"
        )
    tj = Jet.variable(tau, N)
    f_jet = _coerce_jet(spec.A[rec - 1][isrc - 1].evaluate({"x": X_j, "t": tj}), N)
    d_jet = _coerce_jet(spec.A[rec - 1][rec - 1].evaluate({"x": X_j, "t": tj}), N)
    # E(s) = exp(int_{t_row}^{s} a_jj): series factor times the base value
    S = (-d_jet).truncate(N - 1).integrate(0.0).truncate(N)
    xm = x_hat + 0.5 * (t_row - tau) * float(
        np.asarray(cb.lam[rec - 1](np.array([x_hat]), tau))[0]
    )
    am = float(np.asarray(cb.A[rec - 1][rec - 1](np.array([xm]), 0.5 * (tau + t_row)))[0])
    E0 = math.exp(-(t_row - tau) * am)
    E_jet = S.exp() * E0
    total = 0.0
    for q in range(l + 1):
        total += delta_action(q, gap, E_jet * f_jet * a_jets[q])
    return -total


def solve_regular(
    spec: ProblemSpec,
    atoms,
    grid: tuple = (128, 128),
    tol: float = 1e-8,
    max_iter: int = 60,
) -> SolutionGrid:
    """Remainder after the singular part: the diagonal stage absorbs
    the carrier crossings as point sources, the correction stage the
    coupling and the wall nonlinearity at the shifted trace.

    The stages are solved tighter than ``tol`` so their sum stays
    within the advertised tolerance of the unsplit fixed point.
    """
    ensure_validated(spec)
    nx, nt = grid
    xs = np.linspace(0.0, 1.0, nx + 1)
    ts = np.linspace(0.0, spec.t_max, nt + 1)
    cb = callables_from_spec(spec)
    bottom = _bottom_from_exprs(spec.initial.regular, xs)
    L_lin = _linear_gradient_bound(spec)

    cb_bar = Callables(
        n=cb.n,
        k=cb.k,
        lam=cb.lam,
        A=_diag_only(cb),
        g=cb.g,
        h=_matrix_h(spec),
        L_A=0.0,
        L_h=L_lin,
        lam_max=cb.lam_max,
    )
    extra = _crossing_extra(spec, atoms, xs, ts, cb) if atoms else None
    wbar, tr_bar = solve_kernel(
        cb_bar, xs, ts, bottom, tol=0.25 * tol, max_iter=max_iter, extra_row=extra
    )

    tvals = tr_bar.ts
    vvals = tr_bar.values

    def vbar_at(t):
        pos = np.clip((t - tvals[0]) / (tvals[1] - tvals[0]), 0, tvals.size - 1)
        lo = int(min(np.floor(pos), tvals.size - 2))
        w = pos - lo
        return (1 - w) * vvals[:, lo] + w * vvals[:, lo + 1]

    def forced_g(i):
        # base source already enters through the diagonal stage
        couplers = [(j, cb.A[i][j]) for j in range(cb.n) if j != i]

        def g(x, t):
            out = np.zeros(np.shape(x))
            for j, aij in couplers:
                out = out - np.asarray(aij(x, t)) * wbar.interpolate(j + 1, x, t)
            return out

        return g

    cb_tilde = Callables(
        n=cb.n,
        k=cb.k,
        lam=cb.lam,
        A=cb.A,
        g=[forced_g(i) for i in range(cb.n)],
        h=_remainder_h(spec, cb, vbar_at),
        L_A=cb.L_A,
        L_h=cb.L_h + L_lin,
        lam_max=cb.lam_max,
    )
    wtilde, _ = solve_kernel(
        cb_tilde, xs, ts, np.zeros_like(bottom), tol=0.5 * tol, max_iter=max_iter
    )

    warnings = list(wbar.warnings) + list(wtilde.warnings)
    if atoms:
        warnings.append(
            "piecewise continuous: first-order jumps on the singular skeleton"
        )
    return SolutionGrid(
        xs=xs,
        ts=ts,
        values=wbar.values + wtilde.values,
        k=spec.k,
        converged=wbar.converged and wtilde.converged,
        iterations=wbar.iterations + wtilde.iterations,
        contraction=tuple(wbar.contraction) + tuple(wtilde.contraction),
        slab_edges=wbar.slab_edges,
        warnings=tuple(warnings),
    )


# ---------------------------------------------------------------------------
# mollified solves and diagnostics


def mollified_initial(spec: ProblemSpec, moll: Mollifier, eps: float, xs) -> np.ndarray:
    """The singular part of the data convolved with the eps bump."""
    xs = np.asarray(xs, dtype=float)
    rows = np.zeros((spec.n, xs.size))
    for a in spec.initial.atoms:
        rows[a.i - 1] += (
            a.c * eps ** (-1 - a.l) * moll.profile((xs - a.xstar) / eps, a.l)
        )
    return rows


def mollified_solutions(
    spec: ProblemSpec,
    eps: float,
    grid: tuple = (256, 256),
    tol: float = 1e-8,
    max_iter: int = 60,
    moll: Mollifier | None = None,
):
    """Solve the three regularized problems for one eps.

    Returns {"u": .., "z": .., "w": ..}: the full problem with mollified
    data, the decoupled singular stage, and the remainder driven by the
    mollified singular field.
    """
    ensure_validated(spec)
    _reject_nonaffine(spec)
    nx, nt = grid
    xs = np.linspace(0.0, 1.0, nx + 1)
    ts = np.linspace(0.0, spec.t_max, nt + 1)
    if eps < 2.0 * (xs[1] - xs[0]):
        raise DeltaWaveError(
            f"eps = {eps:g} is narrower than two grid cells; refine the grid"
        )
    if moll is None:
        need = max((a.l for a in spec.initial.atoms), default=0)
        moll = Mollifier(order_max=max(2, need + 2))
    cb = callables_from_spec(spec)
    b_r = _bottom_from_exprs(spec.initial.regular, xs)
    b_s = mollified_initial(spec, moll, eps, xs)

    u, _ = solve_kernel(cb, xs, ts, b_r + b_s, tol=tol, max_iter=max_iter)

    L_lin = _linear_gradient_bound(spec)
    cb_z = Callables(
        n=cb.n,
        k=cb.k,
        lam=cb.lam,
        A=_diag_only(cb),
        g=[_zero_xt] * cb.n,
        h=_matrix_h(spec),
        L_A=0.0,
        L_h=L_lin,
        lam_max=cb.lam_max,
    )
    z, _ = solve_kernel(cb_z, xs, ts, b_s.copy(), tol=tol, max_iter=max_iter)

    def forced_g(i):
        base = cb.g[i]
        couplers = [(j, cb.A[i][j]) for j in range(cb.n) if j != i]

        def g(x, t):
            out = np.asarray(base(x, t), dtype=float).copy()
            for j, aij in couplers:
                out -= np.asarray(aij(x, t)) * z.interpolate(j + 1, x, t)
            return out

        return g

    cb_w = Callables(
        n=cb.n,
        k=cb.k,
        lam=cb.lam,
        A=cb.A,
        g=[forced_g(i) for i in range(cb.n)],
        h=cb.h,
        L_A=cb.L_A,
        L_h=cb.L_h,
        lam_max=cb.lam_max,
    )
    w, _ = solve_kernel(cb_w, xs, ts, b_r.copy(), tol=tol, max_iter=max_iter)
    return {"u": u, "z": z, "w": w}


@dataclass
class DeltaWaveDecomposition:
    """Atoms, remainder, skeleton masks, and the eps-series diagnostics."""

    atoms: list
    w: SolutionGrid
    jsets: JSets
    eps_list: tuple
    l1: list  # (eps, L1 norm of u - z - w over the strip)
    sup_k: list  # (eps, sup of w_eps - w off the skeleton)
    pairings: dict  # psi text -> [(eps, <u_eps - (z + w), psi>)]
    flags: list = field(default_factory=list)


def _quad2d(field_xt: np.ndarray, xs: np.ndarray, ts: np.ndarray) -> float:
    return float(np.trapezoid(np.trapezoid(field_xt, xs, axis=-1), ts))


def _off_skeleton_mask(legs, xs, ts, margin):
    keep = np.ones((ts.size, xs.size), dtype=bool)
    for _, curve in legs:
        t0 = float(min(curve.taus[0], curve.taus[-1]))
        t1 = float(max(curve.taus[0], curve.taus[-1]))
        rows = np.where((ts >= t0 - margin) & (ts <= t1 + margin))[0]
        if rows.size == 0:
            continue
        pos = curve.xi(np.clip(ts[rows], t0, t1))
        near = np.abs(xs[None, :] - np.asarray(pos)[:, None]) <= margin
        keep[rows[:, None], np.arange(xs.size)[None, :]] &= ~near
    return keep


def delta_wave(
    spec: ProblemSpec,
    grid: tuple = (256, 256),
    eps_list=(0.1, 0.05, 0.025),
    test_functions=(),
    tol: float = 1e-8,
    max_iter: int = 60,
    resolution: int = RASTER_RES,
    workers: int | None = None,
) -> DeltaWaveDecomposition:
    """Run the eps-series and collect the convergence diagnostics.

    Per-eps solves are independent and run on a small thread pool.
    The L1 norm of u - z - w is taken over the whole strip rectangle;
    the sup norm of w_eps - w over nodes at least three cells plus
    max(eps) away (horizontally) from every skeleton leg.
    """
    ensure_validated(spec)
    _reject_nonaffine(spec)
    eps_list = tuple(float(e) for e in eps_list)
    if len(eps_list) < 3:
        raise DeltaWaveError("need at least three mollifier scales")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise DeltaWaveError("mollifier scales must decrease strictly")
    nx, nt = grid
    if min(eps_list) < 2.0 / nx:
        raise DeltaWaveError(
            "finest mollifier scale is narrower than two grid cells"
        )

    atoms = solve_singular(spec)
    w = solve_regular(spec, atoms, grid=grid, tol=tol, max_iter=max_iter)
    jsets = compute_J_sets(spec, eps_list=eps_list, resolution=resolution)
    need = max((a.order for a in atoms), default=0)
    moll = Mollifier(order_max=max(2, need + 2))

    xs, ts = w.xs, w.ts
    margin = 3.0 * (xs[1] - xs[0]) + max(eps_list)
    keep = _off_skeleton_mask(jsets.legs, xs, ts, margin)

    psi_list = [(str(p), parse(p) if isinstance(p, str) else p) for p in test_functions]
    base_pair = {}
    for text, expr in psi_list:
        fn = expr.compile(("x", "t"))
        psi_grid = fn(xs[None, :], ts[:, None]) * np.ones((ts.size, xs.size))
        zw = sum(atom.pairing(expr) for atom in atoms)
        zw += sum(_quad2d(w.values[i] * psi_grid, xs, ts) for i in range(spec.n))
        base_pair[text] = (zw, psi_grid)

    def run(eps):
        sols = mollified_solutions(
            spec, eps, grid=grid, tol=tol, max_iter=max_iter, moll=moll
        )
        resid = sols["u"].values - sols["z"].values - sols["w"].values
        d1 = sum(_quad2d(np.abs(resid[i]), xs, ts) for i in range(spec.n))
        diff = np.abs(sols["w"].values - w.values)
        d3 = float(diff[:, keep].max()) if keep.any() else 0.0
        pairs = {}
        for text, expr in psi_list:
            zw, psi_grid = base_pair[text]
            ue = sum(
                _quad2d(sols["u"].values[i] * psi_grid, xs, ts)
                for i in range(spec.n)
            )
            pairs[text] = ue - zw
        return d1, d3, pairs

    with ThreadPoolExecutor(max_workers=workers or len(eps_list)) as pool:
        results = list(pool.map(run, eps_list))

    l1 = [(eps, r[0]) for eps, r in zip(eps_list, results)]
    sup_k = [(eps, r[1]) for eps, r in zip(eps_list, results)]
    pairings = {
        text: [(eps, r[2][text]) for eps, r in zip(eps_list, results)]
        for text, _ in psi_list
    }
    flags = []
    for name, series in (("L1 split residual", l1), ("sup off skeleton", sup_k)):
        for (e0, v0), (e1, v1) in zip(series, series[1:]):
            if v1 > 1.1 * v0 + 1e-14:
                flags.append(f"{name} grew from eps={e0:g} to eps={e1:g}")
    return DeltaWaveDecomposition(
        atoms=atoms,
        w=w,
        jsets=jsets,
        eps_list=eps_list,
        l1=l1,
        sup_k=sup_k,
        pairings=pairings,
        flags=flags,
    )
