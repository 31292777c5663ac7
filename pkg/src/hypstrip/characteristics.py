"""Characteristic curves of the transport operators.

For component ``i`` the characteristic through an anchor ``(x, t)``
solves ``dxi/dtau = lambda_i(xi, tau)``.  Backward tracing follows the
curve toward smaller times until it leaves the strip through a side
wall or the initial line; the leaving time is the data-pickup time
``t_i(x, t)`` of the integral equations.  Forward tracing runs toward
the horizon ``t = t_max``.

Curves are integrated with fixed-step classical RK4 (nodes every half
step), the wall crossing is localized by bisection on a single partial
step to ``TOL_B`` in x, and queries between nodes use cubic Hermite
interpolation through the recorded slopes.  Traced curves are cached by
quantized anchor; when a speed does not depend on ``t`` the cached
curve is shared across all anchor times by shifting (the geometry is
translation invariant then).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .problem import ProblemSpec, ensure_validated

__all__ = [
    "CharCurve",
    "CurveError",
    "TangencyError",
    "DEFAULT_STEP",
    "TOL_B",
    "trace_characteristic",
    "exp_weight",
    "intersect",
    "curve_to_csv",
]

DEFAULT_STEP = 1.0 / 1024.0
TOL_B = 1e-10
_QUANT = 1e-12  # anchor quantization for the curve cache

# 4-point Gauss-Legendre rule on [-1, 1]
_GL_X = np.array(
    [-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526]
)
_GL_W = np.array(
    [0.34785484513745385, 0.6521451548625461, 0.6521451548625461, 0.34785484513745385]
)


class CurveError(RuntimeError):
    """Tracing failed; carries the partial curve when one exists."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class TangencyError(CurveError):
    """Speed vanished next to a wall: the strict ordering must be broken."""


@dataclass(frozen=True)
class CharCurve:
    """One traced characteristic.

    ``taus``/``xis``/``slopes`` run from the anchor toward the exit, so
    ``taus`` decreases for backward curves and increases for forward
    ones.  The final node sits exactly on the exit boundary.
    """

    i: int  # 1-based component
    anchor: tuple
    direction: str  # "backward" | "forward"
    taus: np.ndarray
    xis: np.ndarray
    slopes: np.ndarray
    side: str  # "x=0" | "x=1" | "t=0" | "t=max"
    complete: bool = True

    @property
    def t_exit(self) -> float:
        return float(self.taus[-1])

    @property
    def x_exit(self) -> float:
        return float(self.xis[-1])

    @property
    def t_i(self) -> float:
        """Boundary-hit time of a backward curve (the data pickup time)."""
        return self.t_exit

    @property
    def tau_min(self) -> float:
        return float(min(self.taus[0], self.taus[-1]))

    @property
    def tau_max(self) -> float:
        return float(max(self.taus[0], self.taus[-1]))

    def xi(self, tau):
        """Curve position at time(s) tau by cubic Hermite interpolation."""
        single = np.isscalar(tau)
        tq = np.atleast_1d(np.asarray(tau, dtype=float))
        ts, xs, ds = self.taus, self.xis, self.slopes
        if ts[0] > ts[-1]:  # ascending views for searchsorted
            ts, xs, ds = ts[::-1], xs[::-1], ds[::-1]
        if np.any(tq < ts[0] - 1e-9) or np.any(tq > ts[-1] + 1e-9):
            raise ValueError("query time outside the curve's range")
        tq = np.clip(tq, ts[0], ts[-1])
        if ts.size == 1:
            out = np.full_like(tq, xs[0])
            return float(out[0]) if single else out
        m = np.clip(np.searchsorted(ts, tq, side="right") - 1, 0, ts.size - 2)
        h = ts[m + 1] - ts[m]
        s = np.where(h > 0, (tq - ts[m]) / np.where(h > 0, h, 1.0), 0.0)
        s2, s3 = s * s, s * s * s
        out = (
            (2 * s3 - 3 * s2 + 1) * xs[m]
            + (s3 - 2 * s2 + s) * h * ds[m]
            + (-2 * s3 + 3 * s2) * xs[m + 1]
            + (s3 - s2) * h * ds[m + 1]
        )
        return float(out[0]) if single else out

    def __len__(self) -> int:
        return int(self.taus.size)


@functools.lru_cache(maxsize=4096)
def _compiled(expr, names: tuple):
    return expr.compile(names)


def _lam(spec: ProblemSpec, i: int):
    return _compiled(spec.lam[i - 1], ("x", "t"))


def _rk4_step(f, x: float, t: float, dt: float) -> float:
    k1 = f(x, t)
    k2 = f(x + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = f(x + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = f(x + dt * k3, t + dt)
    return x + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0


def _trace_raw(spec, i, x0, t0, direction, step, t_floor, t_ceil):
    """Fixed-step integration from the anchor until the strip boundary."""
    f = _lam(spec, i)
    sgn = -1.0 if direction == "backward" else 1.0
    dt = sgn * 0.5 * step  # nodes every half step
    t_stop = t_floor if direction == "backward" else t_ceil
    taus = [t0]
    xis = [x0]
    slopes = [float(f(x0, t0))]

    x, t = x0, t0
    # anchor already outside through a wall-adjacent corner
    if not -1e-9 <= x <= 1 + 1e-9:
        raise CurveError(f"anchor x={x} outside the strip")
    x = min(max(x, 0.0), 1.0)

    max_steps = int(abs(t_stop - t0) / abs(dt)) + 4
    for _ in range(max_steps):
        remaining = t_stop - t
        if sgn * remaining <= 0:
            break
        clamped = abs(dt) > sgn * remaining
        h_step = remaining if clamped else dt
        x_new = _rk4_step(f, x, t, h_step)
        t_new = t_stop if clamped else t + h_step
        if 0.0 <= x_new <= 1.0:
            x, t = x_new, t_new
            taus.append(t)
            xis.append(x)
            slopes.append(float(f(x, t)))
            if clamped:
                side = "t=0" if direction == "backward" else "t=max"
                return _finish(i, (x0, t0), direction, taus, xis, slopes, side)
            continue
        # wall crossing inside this step: bisect the step fraction
        wall = 0.0 if x_new < 0.0 else 1.0
        lo, hi = 0.0, 1.0
        x_hit, t_hit = x_new, t_new
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            x_mid = _rk4_step(f, x, t, h_step * mid)
            if (x_mid - wall) * (x - wall) > 0:
                lo = mid
            else:
                hi = mid
            x_hit, t_hit = x_mid, t + h_step * mid
            if abs(x_hit - wall) <= TOL_B:
                break
        else:
            slope_here = f(x_hit, t_hit)
            if abs(slope_here) < 1e-8:
                raise TangencyError(
                    f"component {i} grazes x={wall} near t={t_hit:.6g} "
                    f"(speed {slope_here:.3e}); speed ordering suspect",
                    partial=_finish(
                        i, (x0, t0), direction, taus, xis, slopes, "t=0", False
                    ),
                )
            raise CurveError(
                f"wall localization stalled at t={t_hit:.6g}",
                partial=_finish(
                    i, (x0, t0), direction, taus, xis, slopes, "t=0", False
                ),
            )
        taus.append(t_hit)
        xis.append(wall)
        slopes.append(float(f(wall, t_hit)))
        return _finish(
            i, (x0, t0), direction, taus, xis, slopes, f"x={int(wall)}"
        )
    else:
        raise CurveError(
            "max step count exceeded",
            partial=_finish(i, (x0, t0), direction, taus, xis, slopes, "t=0", False),
        )
    taus[-1] = t_stop  # snap rounding drift on the final node
    side = "t=0" if direction == "backward" else "t=max"
    return _finish(i, (x0, t0), direction, taus, xis, slopes, side)


def _finish(i, anchor, direction, taus, xis, slopes, side, complete=True):
    return CharCurve(
        i=i,
        anchor=anchor,
        direction=direction,
        taus=np.array(taus),
        xis=np.array(xis),
        slopes=np.array(slopes),
        side=side,
        complete=complete,
    )


def _quant(value: float) -> int:
    return int(round(value / _QUANT))


@functools.lru_cache(maxsize=8192)
def _trace_cached(spec, i, qx, qt, direction, step):
    return _trace_raw(
        spec, i, qx * _QUANT, qt * _QUANT, direction, step, 0.0, spec.t_max
    )


@functools.lru_cache(maxsize=8192)
def _trace_canonical(spec, i, qx, direction, step):
    """Full-span curve for a t-independent speed, shifted on retrieval."""
    t0 = spec.t_max if direction == "backward" else 0.0
    return _trace_raw(spec, i, qx * _QUANT, t0, direction, step, 0.0, spec.t_max)


def _shift_view(canon: CharCurve, i, x, t, direction, spec) -> CharCurve:
    """Re-anchor a canonical autonomous curve at time t."""
    t_canon = spec.t_max if direction == "backward" else 0.0
    shift = t - t_canon
    taus = canon.taus + shift
    if direction == "backward":
        keep = taus >= -1e-15
        side = canon.side if keep.all() else "t=0"
        t_end = 0.0
    else:
        keep = taus <= spec.t_max + 1e-15
        side = canon.side if keep.all() else "t=max"
        t_end = spec.t_max
    if keep.all():
        return CharCurve(
            i=i, anchor=(x, t), direction=direction,
            taus=taus, xis=canon.xis.copy(), slopes=canon.slopes.copy(),
            side=side, complete=canon.complete,
        )
    m = int(np.argmin(keep))  # first clipped node
    taus_k = taus[:m]
    xis_k = canon.xis[:m].copy()
    slopes_k = canon.slopes[:m].copy()
    # exact endpoint on the time line via interpolation of the canonical curve
    x_end = canon.xi(t_end - shift)
    f = _lam(spec, i)
    taus_k = np.append(taus_k, t_end)
    xis_k = np.append(xis_k, x_end)
    slopes_k = np.append(slopes_k, f(x_end, t_end))
    return CharCurve(
        i=i, anchor=(x, t), direction=direction,
        taus=taus_k, xis=xis_k, slopes=slopes_k, side=side, complete=True,
    )


def trace_characteristic(
    spec: ProblemSpec,
    i: int,
    anchor: tuple,
    direction: str = "backward",
    step: float = DEFAULT_STEP,
    use_cache: bool = True,
) -> CharCurve:
    """Trace the component-i characteristic through ``anchor``.

    Args:
        spec: validated problem (the speed ordering gate runs here).
        i: 1-based component index.
        anchor: (x, t) in the closed strip.
        direction: "backward" toward earlier times (records the data
            pickup time ``t_i``) or "forward" toward the horizon.
        step: RK4 step in time; nodes are recorded every half step.

    Raises:
        CurveError / TangencyError on stalled wall localization, with
        the partial curve attached.
    """
    ensure_validated(spec)
    if direction not in ("backward", "forward"):
        raise ValueError(f"unknown direction {direction!r}")
    if not 1 <= i <= spec.n:
        raise ValueError(f"component {i} out of range 1..{spec.n}")
    x, t = float(anchor[0]), float(anchor[1])
    if not (-1e-9 <= x <= 1 + 1e-9 and -1e-9 <= t <= spec.t_max + 1e-9):
        raise CurveError(f"anchor {anchor} outside the closed strip")
    x = min(max(x, 0.0), 1.0)
    t = min(max(t, 0.0), spec.t_max)
    if not use_cache:
        return _trace_raw(spec, i, x, t, direction, step, 0.0, spec.t_max)
    if "t" not in spec.lam[i - 1].variables():
        canon = _trace_canonical(spec, i, _quant(x), direction, step)
        return _shift_view(canon, i, x, t, direction, spec)
    return _trace_cached(spec, i, _quant(x), _quant(t), direction, step)


def exp_weight(spec: ProblemSpec, i: int, curve: CharCurve, tau: float) -> float:
    """exp of the running integral of ``a_ii`` along the curve.

    Integrates from the anchor time to ``tau`` with composite 4-point
    Gauss quadrature on the curve's node subdivision (O(h^4) accuracy,
    dominated by the Hermite reconstruction of the curve).
    """
    t0 = curve.anchor[1]
    if not curve.tau_min - 1e-9 <= tau <= curve.tau_max + 1e-9:
        raise ValueError(f"tau={tau} outside the curve range")
    tau = min(max(tau, curve.tau_min), curve.tau_max)
    a = _compiled(spec.A[i - 1][i - 1], ("x", "t"))
    if tau == t0:
        return 1.0
    # slice boundaries: curve nodes strictly between t0 and tau
    ts = np.asarray(curve.taus)
    inner = ts[(ts > min(t0, tau)) & (ts < max(t0, tau))]
    edges = np.concatenate(([t0], np.sort(inner) if t0 < tau else -np.sort(-inner), [tau]))
    a_, b_ = edges[:-1], edges[1:]
    mid = 0.5 * (a_ + b_)
    half = 0.5 * (b_ - a_)
    pts = mid[:, None] + half[:, None] * _GL_X[None, :]
    xi = curve.xi(pts.ravel())
    vals = np.broadcast_to(
        np.asarray(a(xi, pts.ravel()), dtype=float), pts.ravel().shape
    ).reshape(pts.shape)
    integral = float(np.sum(half[:, None] * _GL_W[None, :] * vals))
    return float(np.exp(integral))


def intersect(spec: ProblemSpec, curve_a: CharCurve, curve_b: CharCurve, tol: float = TOL_B):
    """Crossing point of two characteristics of different components.

    Returns (x, t) or None.  Distinct speeds make any crossing
    transversal, so a sign change of the gap pins it down; the gap is
    bisected to ``tol``.
    """
    if curve_a.i == curve_b.i:
        raise ValueError("intersection is defined for distinct components")
    lo = max(curve_a.tau_min, curve_b.tau_min)
    hi = min(curve_a.tau_max, curve_b.tau_max)
    if hi < lo:
        return None

    def gap(t):
        return curve_a.xi(t) - curve_b.xi(t)

    # probe on the union of node times inside the overlap
    probes = np.unique(
        np.concatenate(
            [
                np.asarray(curve_a.taus),
                np.asarray(curve_b.taus),
                [lo, hi],
            ]
        )
    )
    probes = probes[(probes >= lo) & (probes <= hi)]
    if probes.size == 0:
        return None
    gaps = np.asarray(curve_a.xi(probes)) - np.asarray(curve_b.xi(probes))
    hit = np.where(np.abs(gaps) <= tol)[0]
    if hit.size:
        t_star = float(probes[hit[0]])
        return (float(curve_a.xi(t_star)), t_star)
    signs = np.sign(gaps)
    change = np.where(signs[:-1] * signs[1:] < 0)[0]
    if change.size == 0:
        return None
    a, b = float(probes[change[0]]), float(probes[change[0] + 1])
    ga = gap(a)
    for _ in range(200):
        mid = 0.5 * (a + b)
        gm = gap(mid)
        if abs(gm) <= tol or (b - a) < 1e-15:
            return (float(curve_a.xi(mid)), mid)
        if ga * gm > 0:
            a, ga = mid, gm
        else:
            b = mid
    return (float(curve_a.xi(0.5 * (a + b))), 0.5 * (a + b))


def curve_to_csv(curve: CharCurve) -> str:
    """Two-column CSV dump (tau, xi) from anchor to exit."""
    lines = ["tau,xi"]
    for t, x in zip(curve.taus, curve.xis):
        lines.append(f"{float(t)!r},{float(x)!r}")
    return "\n".join(lines) + "\n"
