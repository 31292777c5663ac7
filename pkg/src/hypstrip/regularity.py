"""Empirical smoothness of computed solutions on time slabs.

The observable is a finite-difference seminorm: s_m(h) is the largest
undivided m-th difference over slab nodes, in x and in t, divided by
h^m.  For a C^m profile the ladder of s_m values stays within a fixed
band as h halves; a genuine loss of order-m regularity makes it grow
like 1/h.  The classification below turns that contrast into a verdict
and never claims true C^m membership.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .paths import check_iota, compute_Tj
from .problem import ProblemSpec, ensure_validated
from .solver import SolutionGrid, picard_solve

__all__ = [
    "RegularityError",
    "SlabResult",
    "RegularityReport",
    "classify",
    "smoothness_indicator",
    "resolve_ladder",
    "smoothing_report",
    "rough_initial",
]

LADDER_DEFAULT = (1 / 128, 1 / 256, 1 / 512)

HEADLINE = (
    "order-j difference quotients stay bounded above T_j; "
    "this is a grid observable, not a C^j certificate"
)


class RegularityError(ValueError):
    """Slab, ladder, or grid arguments that the indicator cannot honor."""


@dataclass(frozen=True)
class SlabResult:
    order: int
    slab: tuple  # (T, delta)
    s_values: tuple  # ((h, s_m), ...) in ladder order
    classification: str
    label: str = ""


@dataclass(frozen=True)
class RegularityReport:
    t_values: tuple
    verdict: object  # path verdict for the reflection criterion
    slabs: tuple
    ladder: tuple
    headline: str = HEADLINE


def classify(s_pairs, order: int) -> str:
    """Apply the seminorm-ratio rule to a ladder of (h, s) pairs.

    Bounded (< factor 2 spread) means consistent; at least doubling per
    halving on every rung means not consistent; anything in between is
    inconclusive.  Non-halving ladders are normalized per halving.
    """
    pairs = tuple(s_pairs)
    if not pairs:
        raise RegularityError("empty seminorm ladder")
    ss = [s for _, s in pairs]
    smax = max(ss)
    if smax <= 1e-12:
        return f"C^{order}-consistent"
    tiny = 1e-300
    if smax / max(min(ss), tiny) < 2.0:
        return f"C^{order}-consistent"
    for (h0, s0), (h1, s1) in zip(pairs, pairs[1:]):
        if not h1 < h0:
            raise RegularityError("ladder spacings must decrease strictly")
        halvings = math.log2(h0 / h1)
        rate = (s1 / max(s0, tiny)) ** (1.0 / halvings)
        if rate < 2.0 - 1e-9:
            return "inconclusive"
    return f"not C^{order}-consistent"


def _stencil_max(block: np.ndarray, m: int, stride: int, axis: int) -> float:
    """Largest |m-th difference| at the given stride along one axis."""
    length = block.shape[axis]
    span = m * stride
    if length <= span:
        return -1.0
    acc = None
    for j in range(m + 1):
        sl = [slice(None)] * block.ndim
        sl[axis] = slice(j * stride, length - span + j * stride)
        part = ((-1.0) ** (m - j) * math.comb(m, j)) * block[tuple(sl)]
        acc = part if acc is None else acc + part
    return float(np.max(np.abs(acc)))


def smoothness_indicator(
    sol: SolutionGrid, slab: tuple, m: int, h_ladder=LADDER_DEFAULT
) -> SlabResult:
    """Measure s_m(h) on one slab of a computed (or sampled) grid.

    Every h must be an integer multiple of the grid spacing in x; the
    t-direction uses the nearest whole number of rows and normalizes by
    the step it actually realized.  Only nodes with every stencil point
    inside the slab are read (differences never reach below it).
    """
    if m < 1:
        raise RegularityError("difference order must be at least 1")
    T, delta = float(slab[0]), float(slab[1])
    xs, ts = sol.xs, sol.ts
    if delta <= 0:
        raise RegularityError("slab height must be positive")
    if T < ts[0] - 1e-9 or T + delta > ts[-1] + 1e-9:
        raise RegularityError(
            f"slab [{T:g}, {T + delta:g}] leaves the computed range "
            f"[{ts[0]:g}, {ts[-1]:g}]"
        )
    dx = float(xs[1] - xs[0])
    dt = float(ts[1] - ts[0])
    r0 = int(np.searchsorted(ts, T - 1e-9))
    r1 = int(np.searchsorted(ts, T + delta + 1e-9)) - 1
    if r1 < r0:
        raise RegularityError("slab contains no grid rows")
    block = sol.values[:, r0 : r1 + 1, :]

    pairs = []
    prev = None
    for h in h_ladder:
        h = float(h)
        if prev is not None and not h < prev:
            raise RegularityError("ladder spacings must decrease strictly")
        prev = h
        sx = int(round(h / dx))
        if sx < 1 or abs(sx * dx - h) > 1e-9:
            raise RegularityError(
                f"spacing {h:g} is not a multiple of the grid step {dx:g}"
            )
        st = max(1, int(round(h / dt)))
        s_x = _stencil_max(block, m, sx, axis=2) / h**m
        s_t = _stencil_max(block, m, st, axis=1) / (st * dt) ** m
        if s_x < 0 or s_t < 0:
            raise RegularityError(
                f"slab too thin for an order-{m} stencil at spacing {h:g}"
            )
        pairs.append((h, max(s_x, s_t)))
    return SlabResult(
        order=m,
        slab=(T, delta),
        s_values=tuple(pairs),
        classification=classify(pairs, m),
    )


def resolve_ladder(
    spec: ProblemSpec, ladder, tol: float = 1e-8, max_iter: int = 60
) -> dict:
    """Re-solve the problem once per ladder spacing with dt = dx = h.

    Independent solves run on a small thread pool.
    """
    ensure_validated(spec)
    ladder = tuple(float(h) for h in ladder)
    grids = []
    for h in ladder:
        nx = int(round(1.0 / h))
        if nx < 2 or abs(nx * h - 1.0) > 1e-9:
            raise RegularityError(f"spacing {h:g} does not divide the interval")
        nt = max(1, int(round(spec.t_max / h)))
        grids.append((nx, nt))

    def run(args):
        nx, nt = args
        sol, _ = picard_solve(spec, grid=(nx, nt), tol=tol, max_iter=max_iter)
        return sol

    with ThreadPoolExecutor(max_workers=len(grids)) as pool:
        sols = list(pool.map(run, grids))
    return dict(zip(ladder, sols))


def smoothing_report(
    spec: ProblemSpec,
    m_max: int = 2,
    j_max: int = 2,
    ladder=LADDER_DEFAULT,
    delta: float = 0.25,
    margin: float = 0.1,
    tol: float = 1e-8,
    max_iter: int = 60,
) -> RegularityReport:
    """Contrast seminorm ladders just below and just above each T_j.

    T_j are the regeneration times from the path analysis; order j is
    capped at m_max.  A T_j that does not fit under t_max (including
    inf, meaning a crossing never completed) yields inconclusive slabs
    with no measurements, and the reflection verdict rides along.
    """
    ensure_validated(spec)
    ladder = tuple(float(h) for h in ladder)
    verdict = check_iota(spec)
    t_raw = compute_Tj(spec, j_max)
    t_values = tuple(t_raw) + (math.inf,) * (j_max - len(t_raw))
    solves = resolve_ladder(spec, ladder, tol=tol, max_iter=max_iter)

    slabs = []
    for j in range(1, j_max + 1):
        order = min(j, m_max)
        Tj = t_values[j - 1]
        feasible = math.isfinite(Tj) and Tj + margin + delta <= spec.t_max + 1e-9
        for side in ("below", "above"):
            label = f"{side} T_{j}"
            if not feasible:
                slabs.append(
                    SlabResult(
                        order=order,
                        slab=(),
                        s_values=(),
                        classification="inconclusive",
                        label=label,
                    )
                )
                continue
            if side == "below":
                start = max(0.0, Tj - margin - delta)
            else:
                start = Tj + margin
            pairs = []
            for h in ladder:
                res = smoothness_indicator(solves[h], (start, delta), order, (h,))
                pairs.append(res.s_values[0])
            slabs.append(
                SlabResult(
                    order=order,
                    slab=(start, delta),
                    s_values=tuple(pairs),
                    classification=classify(pairs, order),
                    label=label,
                )
            )
    return RegularityReport(
        t_values=t_values, verdict=verdict, slabs=tuple(slabs), ladder=ladder
    )


def rough_initial(
    terms: int = 13,
    growth: float = 1.15,
    periodic: bool = False,
    window: bool | None = None,
) -> str:
    """Lacunary cosine cascade with geometrically growing amplitudes.

    The partial sum is smooth on any fixed grid but its first-difference
    seminorm grows by about growth*2 per halving until the last term is
    resolved.  The aperiodic variant is windowed by default so it meets
    zero walls smoothly; the periodic variant wraps by construction.
    """
    if terms < 1:
        raise RegularityError("need at least one cascade term")
    if window is None:
        window = not periodic
    parts = []
    for j in range(terms):
        freq = 2**j * (2 if periodic else 1)
        parts.append(f"{growth**j!r}*cos({freq}*pi*x)")
    body = " + ".join(parts)
    if window:
        return f"(4*x*(1 - x))**2 * ({body})"
    return f"({body})"
