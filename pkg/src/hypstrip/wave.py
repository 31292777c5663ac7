"""Wave-equation problems on the strip, reduced to a 2x2 first-order system.

(d_t^2 - a^2 d_x^2)u = f with displacement/velocity data (phi, psi)
factors through the pair (w, u), w = (d_t + a d_x)u:

    (d_t - a d_x)w = f,      w(x, 0) = psi + a phi'
    (d_t + a d_x)u = w,      u(x, 0) = phi

The speeds are ordered (-a, a), so w is the first component (k = 1) and
the displacement rides second; the wall laws map accordingly, h2 on w
at x = 1 and h1 on u at x = 0, both reading the trace slots
v1 = w(0, t) and v2 = u(1, t).

In a problem file a wave instance is a single ``[wave]`` table with
keys a, t_max, f(x, t), phi(x), psi(x), and h1/h2 written over the
variables t, u1 = u(1, t), w0 = w(0, t).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expressions import Call, Const, Expr, Neg, Var, parse
from .problem import (
    GeneralNonlinear,
    InitialData,
    ProblemError,
    ProblemSpec,
    ensure_validated,
)

__all__ = [
    "WaveError",
    "WaveProblem",
    "wave_problem_from_table",
    "wave_compatibility",
    "reduce_wave",
    "lift_wave_solution",
]

TOL_C = 1e-8


class WaveError(ProblemError):
    """Malformed wave problem or a lift applied to the wrong grid."""


@dataclass(frozen=True)
class WaveProblem:
    a: float
    f: Expr  # forcing, (x, t)
    phi: Expr  # displacement at t = 0, (x)
    psi: Expr  # velocity at t = 0, (x)
    h1: Expr  # law for u(0, t), over (t, u1, w0)
    h2: Expr  # law for w(1, t), over (t, u1, w0)
    t_max: float
    tol_c: float = TOL_C


def _parse_scoped(text, allowed, where):
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return Const(float(text))
    if not isinstance(text, str):
        raise WaveError(f"{where}: expected an expression string")
    try:
        tree = parse(text)
    except Exception as err:
        raise WaveError(f"{where}: {err}") from None
    extra = tree.variables() - allowed
    if extra:
        raise WaveError(f"{where}: unknown variables {sorted(extra)}")
    return tree


def wave_problem_from_table(table: dict) -> WaveProblem:
    """Read the ``[wave]`` table of a problem file."""
    if not isinstance(table, dict):
        raise WaveError("wave section must be a table")
    for key in ("a", "t_max", "f", "phi", "psi", "h1", "h2"):
        if key not in table:
            raise WaveError(f"wave table is missing {key!r}")
    try:
        a = float(table["a"])
        t_max = float(table["t_max"])
    except (TypeError, ValueError) as err:
        raise WaveError(f"bad wave scalar: {err}") from None
    if not (np.isfinite(a) and a > 0):
        raise WaveError(f"wave speed must be a positive constant, got {a!r}")
    if not t_max > 0:
        raise WaveError("t_max must be positive")
    bc_vars = frozenset({"t", "u1", "w0"})
    wp = WaveProblem(
        a=a,
        f=_parse_scoped(table["f"], frozenset({"x", "t"}), "wave.f"),
        phi=_parse_scoped(table["phi"], frozenset({"x"}), "wave.phi"),
        psi=_parse_scoped(table["psi"], frozenset({"x"}), "wave.psi"),
        h1=_parse_scoped(table["h1"], bc_vars, "wave.h1"),
        h2=_parse_scoped(table["h2"], bc_vars, "wave.h2"),
        t_max=t_max,
        tol_c=float(table.get("tol_c", TOL_C)),
    )
    return wp


def wave_compatibility(wp: WaveProblem) -> tuple:
    """Zero-order corner residuals of the two wall laws.

    Returns (|u corner|, |w corner|); both compare data traces at t = 0
    against the laws evaluated on those traces.
    """
    u1 = float(wp.phi.evaluate({"x": 1.0}))
    dphi = wp.phi.diff("x")
    w0 = float(wp.psi.evaluate({"x": 0.0}) + wp.a * dphi.evaluate({"x": 0.0}))
    env = {"t": 0.0, "u1": u1, "w0": w0}
    r_u = abs(float(wp.phi.evaluate({"x": 0.0})) - float(wp.h1.evaluate(env)))
    w_at_1 = float(wp.psi.evaluate({"x": 1.0}) + wp.a * dphi.evaluate({"x": 1.0}))
    r_w = abs(w_at_1 - float(wp.h2.evaluate(env)))
    return (r_u, r_w)


def _rename(expr: Expr, mapping: dict) -> Expr:
    if isinstance(expr, Var):
        return Var(mapping.get(expr.name, expr.name))
    if isinstance(expr, Const):
        return expr
    if isinstance(expr, Call):
        return Call(expr.fn, _rename(expr.arg, mapping))
    if isinstance(expr, Neg):
        return Neg(_rename(expr.a, mapping))
    if hasattr(expr, "b"):
        return type(expr)(_rename(expr.a, mapping), _rename(expr.b, mapping))
    return type(expr)(_rename(expr.a, mapping))


def reduce_wave(wp: WaveProblem, strict: bool = False) -> ProblemSpec:
    """Build the equivalent 2x2 spec, components ordered (w, u).

    Corner residuals beyond tol_c raise only under ``strict``; the
    continuous machinery tolerates an incompatible corner (the jump
    rides a characteristic) and the standard examples lean on that.
    """
    if not isinstance(wp, WaveProblem):
        raise WaveError("reduce_wave expects a WaveProblem")
    if strict:
        r_u, r_w = wave_compatibility(wp)
        if max(r_u, r_w) > wp.tol_c:
            raise WaveError(
                f"zero-order corner residuals ({r_u:.3e}, {r_w:.3e}) "
                f"exceed tol_c = {wp.tol_c:g}"
            )
    trace_map = {"u1": "v2", "w0": "v1"}
    boundary = GeneralNonlinear(
        h=(_rename(wp.h2, trace_map), _rename(wp.h1, trace_map))
    )
    zero = Const(0.0)
    try:
        dphi = wp.phi.diff("x")
    except Exception as err:
        raise WaveError(f"phi is not differentiable: {err}") from None
    w0_expr = parse(f"({wp.psi}) + {wp.a!r}*({dphi})")
    spec = ProblemSpec(
        n=2,
        k=1,
        lam=(Const(-wp.a), Const(wp.a)),
        A=((zero, zero), (Const(-1.0), zero)),
        g=(wp.f, zero),
        boundary=boundary,
        initial=InitialData(regular=(w0_expr, wp.phi)),
        t_max=wp.t_max,
        origin="wave",
    )
    ensure_validated(spec)
    return spec


def lift_wave_solution(sol, spec: ProblemSpec):
    """Extract the displacement from a solved reduced system.

    The reduction carries u as the second component; the originating
    spec must be tagged by reduce_wave.
    """
    if not isinstance(spec, ProblemSpec) or spec.origin != "wave":
        raise WaveError("solution does not come from a reduced wave problem")
    if sol.values.shape[0] != 2:
        raise WaveError("expected a two-component grid")
    from .solver import SolutionGrid

    return SolutionGrid(
        xs=sol.xs,
        ts=sol.ts,
        values=sol.values[1:2].copy(),
        k=0,
        converged=sol.converged,
        iterations=sol.iterations,
        contraction=sol.contraction,
        slab_edges=sol.slab_edges,
        warnings=sol.warnings,
    )
