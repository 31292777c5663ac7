"""Wall-reflection structure and singularity-path analysis.

A singularity riding the i-th characteristic meets the wall where the
trace slot v_i is measured.  Any boundary law h_j that actually depends
on v_i re-emits it along the j-th family from j's inflow wall, either on
the same wall ("same_side") or across the strip ("jumping").  Chains of
such legs are searched breadth-first over arrival-time intervals; the
chain geometry is exact (traced characteristics), while coefficient
activity is decided by sampling.

Two gate policies are provided: the static check treats a reflection as
present when its coefficient is nonzero anywhere in time, the dynamic
check gates every reflection by the actual arrival window and seeds the
search from a rasterized influence domain of the initial line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .characteristics import trace_characteristic
from .problem import (
    Classical,
    LinearReflection,
    ProblemError,
    ProblemSpec,
    ensure_validated,
)

__all__ = [
    "TOL_R",
    "DEPTH_MAX",
    "Z_SAMPLES",
    "RASTER_RES",
    "Reflection",
    "PathGraph",
    "PathLeg",
    "PathVerdict",
    "InfluenceRaster",
    "DetrReport",
    "reflection_graph",
    "path_graph",
    "check_iota",
    "check_iota2",
    "compute_Tj",
    "influence_domain",
    "detr_criterion",
    "validate_path",
]

TOL_R = 1e-9
DEPTH_MAX = 64
Z_SAMPLES = 33
RASTER_RES = 256


@dataclass(frozen=True)
class Reflection:
    """Directed re-emission edge src -> dst with the emitting wall."""

    src: int
    dst: int
    wall: float
    kind: str  # "same_side" | "jumping"


@dataclass(frozen=True)
class PathGraph:
    n: int
    k: int
    edges: tuple


@dataclass(frozen=True)
class PathLeg:
    """One characteristic leg of a path, tracked as a time interval.

    ``enter`` is the birth window (on the inflow wall, or on the data
    line for seeds), ``arrive`` the window of outflow-wall arrivals,
    capped at the horizon when the leg is still inside at that time.
    """

    comp: int
    enter: tuple
    arrive: tuple
    alive: bool


@dataclass
class PathVerdict:
    status: str  # "holds" | "violated" | "inconclusive"
    t_prime: float | None
    witness: tuple | None
    explored: int
    horizon: float
    depth_max: int

    def __str__(self):
        if self.status == "holds":
            return f"holds (T' = {self.t_prime:.6g}, {self.explored} legs)"
        if self.status == "violated":
            chain = "->".join(str(leg.comp) for leg in self.witness)
            return f"violated at horizon {self.horizon:g} by path {chain}"
        return f"inconclusive (depth {self.depth_max} exhausted)"


# ---------------------------------------------------------------------------
# reflection detection


def _v_samples(n, scale=10.0, count=Z_SAMPLES, seed=2024):
    pts = [np.zeros(n)]
    for m in range(n):
        e = np.zeros(n)
        e[m] = scale
        pts.append(e.copy())
        pts.append(-e)
    rng = np.random.default_rng(seed)
    while len(pts) < count:
        pts.append(rng.uniform(-scale, scale, n))
    return np.array(pts)


def _edge_strength(spec, i, j, t_lo, t_hi, tol=TOL_R):
    """Largest sampled |dh_j/dv_i| over the window and a box of traces."""
    d = spec.h_exprs()[j - 1].diff(f"v{i}")
    if not d.variables():
        return abs(float(d.evaluate({})))
    names = ("t",) + tuple(f"v{m}" for m in range(1, spec.n + 1))
    f = d.compile(names)
    ts = np.linspace(t_lo, t_hi, Z_SAMPLES)
    V = _v_samples(spec.n)
    T = np.repeat(ts, V.shape[0])
    cols = [np.tile(V[:, m], ts.size) for m in range(spec.n)]
    with np.errstate(all="ignore"):
        vals = np.abs(np.asarray(f(T, *cols), dtype=float))
    vals = vals[np.isfinite(vals)]
    return float(vals.max()) if vals.size else 0.0


def reflection_graph(spec: ProblemSpec, tol: float = TOL_R) -> tuple:
    """All re-emission edges, with coefficients probed over all of time."""
    ensure_validated(spec)
    n, k = spec.n, spec.k
    if isinstance(spec.boundary, Classical):
        return ()
    edges = []
    if isinstance(spec.boundary, LinearReflection):
        for a, row in enumerate(spec.boundary.B):  # h_{k+1+a} gets v_{1+b}
            for b, val in enumerate(row):
                if abs(val) > tol:
                    edges.append((1 + b, k + 1 + a))
        for a, row in enumerate(spec.boundary.C):  # h_{1+a} gets v_{k+1+b}
            for b, val in enumerate(row):
                if abs(val) > tol:
                    edges.append((k + 1 + b, 1 + a))
    else:
        for j in range(1, n + 1):
            for i in range(1, n + 1):
                if _edge_strength(spec, i, j, 0.0, spec.t_max) > tol:
                    edges.append((i, j))
    out = []
    for i, j in sorted(edges):
        same = spec.outflow_wall(i) == spec.inflow_wall(j)
        out.append(
            Reflection(
                src=i,
                dst=j,
                wall=spec.inflow_wall(j),
                kind="same_side" if same else "jumping",
            )
        )
    return tuple(out)


def path_graph(spec: ProblemSpec) -> PathGraph:
    return PathGraph(n=spec.n, k=spec.k, edges=reflection_graph(spec))


# ---------------------------------------------------------------------------
# path search


def _forward_exit(spec, i, x0, t0, horizon):
    """(exit time capped at horizon, still inside at horizon?)"""
    if t0 >= horizon - 1e-13:
        return horizon, True
    curve = trace_characteristic(spec, i, (x0, t0), "forward")
    if curve.side == "t=max":
        return horizon, curve.t_exit >= horizon - 1e-12
    if curve.t_exit > horizon + 1e-12:
        return horizon, True
    return float(curve.t_exit), False


def _leg_from_wall(spec, j, t_lo, t_hi, horizon):
    x_in = spec.inflow_wall(j)
    a_lo, alive_lo = _forward_exit(spec, j, x_in, t_lo, horizon)
    a_hi, alive_hi = _forward_exit(spec, j, x_in, t_hi, horizon)
    return PathLeg(
        comp=j,
        enter=(t_lo, t_hi),
        arrive=(a_lo, a_hi),
        alive=alive_lo or alive_hi,
    )


def _initial_seeds(spec, horizon):
    """First legs of all paths rooted on the data line t=0.

    Seeds across the line arrive at the outflow wall anywhere between
    immediately (seed already sitting there) and the full crossing of
    the characteristic entering at the inflow corner.
    """
    seeds = []
    for i in range(1, spec.n + 1):
        a_hi, alive = _forward_exit(spec, i, spec.inflow_wall(i), 0.0, horizon)
        seeds.append(PathLeg(comp=i, enter=(0.0, 0.0), arrive=(0.0, a_hi), alive=alive))
    return seeds


def _search(spec, seeds, targets_fn, horizon, depth_max):
    explored = len(seeds)
    t_prime = 0.0
    for leg in seeds:
        t_prime = max(t_prime, leg.arrive[1])
        if leg.alive:
            return PathVerdict(
                "violated", None, (leg,), explored, horizon, depth_max
            )
    visited = set()
    frontier = [(leg, (leg,), 1) for leg in seeds]
    while frontier:
        nxt = []
        for leg, chain, depth in frontier:
            lo, hi = leg.arrive
            targets = targets_fn(leg.comp, lo, hi)
            if not targets:
                continue
            if depth >= depth_max:
                return PathVerdict(
                    "inconclusive", None, chain, explored, horizon, depth_max
                )
            for j in targets:
                key = (j, round(lo, 12), round(hi, 12))
                if key in visited:
                    continue
                visited.add(key)
                new = _leg_from_wall(spec, j, lo, hi, horizon)
                explored += 1
                t_prime = max(t_prime, new.arrive[1])
                if new.alive:
                    return PathVerdict(
                        "violated",
                        None,
                        chain + (new,),
                        explored,
                        horizon,
                        depth_max,
                    )
                nxt.append((new, chain + (new,), depth + 1))
        frontier = nxt
    return PathVerdict("holds", t_prime, None, explored, horizon, depth_max)


def _resolve_horizon(spec, horizon):
    if horizon is None:
        return float(spec.t_max)
    if not 0.0 < horizon <= spec.t_max:
        raise ValueError(
            f"horizon must lie in (0, t_max={spec.t_max}], got {horizon}"
        )
    return float(horizon)


def check_iota(
    spec: ProblemSpec, horizon: float | None = None, depth_max: int = DEPTH_MAX
) -> PathVerdict:
    """Do all reflection chains from the data line die out before the horizon?

    Reflections are taken structurally: an edge is available whenever its
    coefficient is nonzero anywhere in time.
    """
    ensure_validated(spec)
    horizon = _resolve_horizon(spec, horizon)
    adjacency = {}
    for e in reflection_graph(spec):
        adjacency.setdefault(e.src, []).append(e.dst)

    def targets(i, lo, hi):
        return adjacency.get(i, ())

    return _search(spec, _initial_seeds(spec, horizon), targets, horizon, depth_max)


def check_iota2(
    spec: ProblemSpec,
    horizon: float | None = None,
    depth_max: int = DEPTH_MAX,
    resolution: int = RASTER_RES,
) -> PathVerdict:
    """Refined check: chains start from the rasterized influence of the
    data line and every reflection is gated by coefficient activity in
    the actual arrival window.  The raster here is coupling-free: only
    characteristics and wall re-emission carry a singularity at its own
    order."""
    ensure_validated(spec)
    horizon = _resolve_horizon(spec, horizon)
    raster = influence_domain(
        spec, resolution=resolution, horizon=horizon, couple=False
    )
    seeds = []
    for i in range(1, spec.n + 1):
        for lo, hi in raster.contact_intervals(i, strict=True):
            alive = hi >= horizon - 1.5 * raster.dt
            seeds.append(PathLeg(comp=i, enter=(lo, hi), arrive=(lo, hi), alive=alive))
    def targets(i, lo, hi):
        out = []
        for j in range(1, spec.n + 1):
            if _edge_strength(spec, i, j, lo, max(hi, lo + 1e-9)) > TOL_R:
                out.append(j)
        return out

    verdict = _search(spec, seeds, targets, horizon, depth_max)
    if verdict.status == "violated":
        return verdict
    # influence trapped inside the strip at the horizon row also
    # violates, even when no individual chain is still alive
    if raster.strict[:, -1, :].any():
        comp = int(np.where(raster.strict[:, -1, :].any(axis=1))[0][0]) + 1
        leg = PathLeg(
            comp=comp, enter=(horizon, horizon), arrive=(horizon, horizon), alive=True
        )
        return PathVerdict(
            "violated", None, (leg,), verdict.explored + 1, horizon, depth_max
        )
    return verdict


def validate_path(spec: ProblemSpec, legs, tol: float = 1e-9) -> bool:
    """Structural soundness of a chain: every hop is a real reflection
    edge and birth windows match the previous arrivals."""
    graph = {(e.src, e.dst) for e in reflection_graph(spec)}
    for prev, new in zip(legs, legs[1:]):
        if (prev.comp, new.comp) not in graph:
            return False
        if abs(prev.arrive[0] - new.enter[0]) > tol:
            return False
        if abs(prev.arrive[1] - new.enter[1]) > tol:
            return False
    return True


def compute_Tj(spec: ProblemSpec, count: int) -> tuple:
    """Regeneration times: T_j is when the slowest characteristic born on
    the line T_{j-1} leaves the strip; entries are inf once a crossing
    no longer completes before t_max."""
    ensure_validated(spec)
    out = []
    t = 0.0
    for _ in range(count):
        worst = t
        blocked = False
        for i in range(1, spec.n + 1):
            if t >= spec.t_max - 1e-13:
                blocked = True
                break
            curve = trace_characteristic(spec, i, (spec.inflow_wall(i), t), "forward")
            if curve.side == "t=max" and abs(
                curve.x_exit - spec.outflow_wall(i)
            ) > 1e-9:
                blocked = True
                break
            worst = max(worst, float(curve.t_exit))
        if blocked:
            out.append(math.inf)
            break
        out.append(worst)
        t = worst
    return tuple(out)


# ---------------------------------------------------------------------------
# influence raster


@dataclass
class InfluenceRaster:
    """Cell-level over/under approximation of where the data line's
    values can influence the solution.

    ``plain`` dilates transport targets and samples coupling at cell
    corners as well (outer estimate); ``strict`` keeps cell centers only
    (inner estimate), so strict implies plain cell by cell.
    """

    centers: np.ndarray
    ts: np.ndarray
    dx: float
    dt: float
    horizon: float
    plain: np.ndarray  # bool (n, rows, cells)
    strict: np.ndarray
    contacts_plain: np.ndarray  # bool (n, rows): outflow-wall contact
    contacts_strict: np.ndarray

    def contact_intervals(self, i: int, strict: bool = True, gap_rows: int = 2):
        flags = (self.contacts_strict if strict else self.contacts_plain)[i - 1]
        idx = np.where(flags)[0]
        if idx.size == 0:
            return []
        runs = []
        start = prev = idx[0]
        for r in idx[1:]:
            if r - prev > gap_rows:
                runs.append((start, prev))
                start = r
            prev = r
        runs.append((start, prev))
        out = []
        for a, b in runs:
            lo = max(0.0, self.ts[a] - 0.5 * self.dt)
            hi = min(self.horizon, self.ts[b] + 0.5 * self.dt)
            out.append((float(lo), float(hi)))
        return out


def _xt_eval(expr):
    """(kind, payload): constant value or compiled (x, t) callable."""
    if not expr.variables():
        return ("const", float(expr.evaluate({})))
    f = expr.compile(("x", "t"))

    def call(x, t):
        out = f(x, t)
        return np.broadcast_to(np.asarray(out, dtype=float), np.shape(x))

    return ("fn", call)


def _edge_activity_by_row(spec, ts, tol):
    """activity[(i, j)] -> bool array over raster rows."""
    n = spec.n
    hs = spec.h_exprs()
    V = _v_samples(n)
    acts = {}
    for j in range(1, n + 1):
        for i in range(1, n + 1):
            d = hs[j - 1].diff(f"v{i}")
            if not d.variables():
                val = abs(float(d.evaluate({})))
                if val > tol:
                    acts[(i, j)] = np.ones(ts.size, dtype=bool)
                continue
            names = ("t",) + tuple(f"v{m}" for m in range(1, n + 1))
            f = d.compile(names)
            T = np.repeat(ts, V.shape[0])
            cols = [np.tile(V[:, m], ts.size) for m in range(n)]
            with np.errstate(all="ignore"):
                vals = np.abs(np.asarray(f(T, *cols), dtype=float))
            vals = np.where(np.isfinite(vals), vals, 0.0)
            per_row = vals.reshape(ts.size, V.shape[0]).max(axis=1)
            if np.any(per_row > tol):
                acts[(i, j)] = per_row > tol
    return acts


def _merge_intervals(ivs, tol):
    if not ivs:
        return []
    ivs = sorted(ivs)
    out = [list(ivs[0])]
    for a, b in ivs[1:]:
        if a <= out[-1][1] + tol:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return [(a, b) for a, b in out]


def _intersect_intervals(xs, ys):
    out = []
    i = j = 0
    while i < len(xs) and j < len(ys):
        a = max(xs[i][0], ys[j][0])
        b = min(xs[i][1], ys[j][1])
        if a <= b:
            out.append((a, b))
        if xs[i][1] < ys[j][1]:
            i += 1
        else:
            j += 1
    return out


def _activity_intervals(flags, centers, dx, shrink):
    """Convert a sampled boolean row to x-intervals; shrink the runs by
    one cell for the inner variant."""
    idx = np.where(flags)[0]
    if idx.size == 0:
        return []
    out = []
    start = prev = idx[0]
    for p in idx[1:]:
        if p - prev > 1:
            out.append((start, prev))
            start = p
        prev = p
    out.append((start, prev))
    ivs = []
    for a, b in out:
        lo = centers[a] - 0.5 * dx + (dx if shrink else 0.0)
        hi = centers[b] + 0.5 * dx - (dx if shrink else 0.0)
        if lo <= hi:
            ivs.append((lo, hi))
    return ivs


def influence_domain(
    spec: ProblemSpec,
    resolution: int = RASTER_RES,
    horizon: float | None = None,
    seeds=None,
    tol: float = TOL_R,
    couple: bool = True,
) -> InfluenceRaster:
    """March the influenced set of the data line forward in time.

    Per component the set is a union of x-intervals whose endpoints are
    advected exactly (midpoint steps along the characteristics), so the
    approximation error does not compound across rows.  Inside a row,
    influence crosses into other families where the coupling coefficient
    is sampled nonzero, and touching the outflow wall re-emits along
    every boundary edge active at that time.  The returned masks
    rasterize the interval sets: ``plain`` marks every cell the outer
    intervals overlap, ``strict`` only cells whose center lies in an
    inner interval.

    ``seeds`` is None for the whole data line, or a list of (x, comp)
    points to track individual sources.  ``couple=False`` drops the
    interior cross-component spread, leaving only the order-preserving
    mechanisms (characteristics and wall re-emission); an interior
    crossing hands over a strictly milder singularity, so the path
    criteria must not treat it as transport.
    """
    ensure_validated(spec)
    horizon = _resolve_horizon(spec, horizon)
    n, k = spec.n, spec.k
    P = int(resolution)
    dx = 1.0 / P
    centers = (np.arange(P) + 0.5) * dx

    lam = [_xt_eval(e) for e in spec.lam]
    A = [[_xt_eval(spec.A[i][j]) for j in range(n)] for i in range(n)]
    lam_max = 0.0
    ts_probe = np.linspace(0.0, horizon, 33)
    for kind, payload in lam:
        if kind == "const":
            lam_max = max(lam_max, abs(payload))
        else:
            for t in ts_probe:
                lam_max = max(lam_max, float(np.max(np.abs(payload(centers, t)))))
    rows = max(2, int(math.ceil(horizon * max(lam_max, 1.0) / dx)) + 1)
    ts = np.linspace(0.0, horizon, rows)
    dt = float(ts[1] - ts[0])
    mtol = 0.25 * dx  # merge slop, below the raster's own granularity

    plain = np.zeros((n, rows, P), dtype=bool)
    strict = np.zeros((n, rows, P), dtype=bool)
    c_plain = np.zeros((n, rows), dtype=bool)
    c_strict = np.zeros((n, rows), dtype=bool)

    if seeds is None:
        iv_s = [[(0.0, 1.0)] for _ in range(n)]
        iv_p = [[(0.0, 1.0)] for _ in range(n)]
    else:
        iv_s = [[] for _ in range(n)]
        iv_p = [[] for _ in range(n)]
        for x0, comp in seeds:
            iv_s[comp - 1].append((x0, x0))
            iv_p[comp - 1].append((max(0.0, x0 - dx), min(1.0, x0 + dx)))
        iv_s = [_merge_intervals(v, mtol) for v in iv_s]
        iv_p = [_merge_intervals(v, mtol) for v in iv_p]

    acts = _edge_activity_by_row(spec, ts, tol)
    edges = sorted(acts.keys())

    def advect(points, i, t0):
        kind, payload = lam[i]
        if kind == "const":
            return points + dt * payload
        mid = points + 0.5 * dt * payload(points, t0)
        return points + dt * payload(np.clip(mid, 0.0, 1.0), t0 + 0.5 * dt)

    def paint(mask_row, ivs, inner):
        for a, b in ivs:
            if inner:
                p_lo = int(math.ceil(a / dx - 0.5))
                p_hi = int(math.floor(b / dx - 0.5))
                if p_hi < p_lo:
                    # degenerate interval: still mark the cell it runs through
                    p_lo = p_hi = int(math.floor(0.5 * (a + b) / dx))
            else:
                p_lo = int(math.floor(a / dx))
                p_hi = int(math.floor(b / dx))
            if p_hi < 0 or p_lo > P - 1:
                continue
            mask_row[max(0, p_lo) : min(P, p_hi + 1)] = True

    # coupling structure: None = active everywhere, () = never
    coup = {}
    if couple:
        for l in range(n):
            for j in range(n):
                if l == j:
                    continue
                kind, payload = A[l][j]
                if kind == "const":
                    if abs(payload) > tol:
                        coup[(l, j)] = None
                else:
                    coup[(l, j)] = payload

    def close_row(ivs, t_now, shrink):
        for _ in range(n):
            changed = False
            for (l, j), payload in coup.items():
                src = ivs[j]
                if not src:
                    continue
                if payload is None:
                    add = src
                else:
                    with np.errstate(all="ignore"):
                        flags = np.abs(payload(centers, t_now)) > tol
                    act = _activity_intervals(flags, centers, dx, shrink)
                    add = _intersect_intervals(src, act)
                if add:
                    merged = _merge_intervals(ivs[l] + add, mtol)
                    if merged != ivs[l]:
                        ivs[l] = merged
                        changed = True
            if not changed:
                break

    for variant, ivs in (("strict", iv_s), ("plain", iv_p)):
        close_row(ivs, 0.0, variant == "strict")
    for i in range(n):
        paint(strict[i, 0], iv_s[i], True)
        paint(plain[i, 0], iv_p[i], False)

    with np.errstate(all="ignore"):
        for r in range(1, rows):
            t_prev = float(ts[r - 1])
            t_now = float(ts[r])
            for variant, ivs, cflag, margin in (
                ("strict", iv_s, c_strict, 1e-12),
                ("plain", iv_p, c_plain, dx),
            ):
                for i in range(n):
                    if not ivs[i]:
                        continue
                    pts = np.array([e for ab in ivs[i] for e in ab])
                    moved = advect(pts, i, t_prev)
                    out_left = (i + 1) <= k
                    new = []
                    contact = False
                    for m in range(0, moved.size, 2):
                        a, b = sorted((float(moved[m]), float(moved[m + 1])))
                        if out_left:
                            if a <= margin:
                                contact = True
                        else:
                            if b >= 1.0 - margin:
                                contact = True
                        a, b = max(a, 0.0), min(b, 1.0)
                        if a <= b:
                            new.append((a, b))
                    ivs[i] = _merge_intervals(new, mtol)
                    if contact:
                        cflag[i, r] = True
                # wall re-emission through the edges active at this time
                for i, j in edges:
                    if not acts[(i, j)][r]:
                        continue
                    if cflag[i - 1, r]:
                        w_in = 1.0 if j <= k else 0.0
                        ivs[j - 1] = _merge_intervals(
                            ivs[j - 1] + [(w_in, w_in)], mtol
                        )
                close_row(ivs, t_now, variant == "strict")
            for i in range(n):
                paint(strict[i, r], iv_s[i], True)
                paint(plain[i, r], iv_p[i], False)

    return InfluenceRaster(
        centers=centers,
        ts=ts,
        dx=dx,
        dt=dt,
        horizon=horizon,
        plain=plain,
        strict=strict,
        contacts_plain=c_plain,
        contacts_strict=c_strict,
    )


# ---------------------------------------------------------------------------
# structural determinant criterion for linear wall reflection


@dataclass
class DetrReport:
    """Two independent readings of the reflection matrix structure.

    ``acyclic``: no directed cycle alternating between the two wall
    coupling blocks.  ``vanish``: every non-leading expansion summand of
    the reflection determinant is below tolerance.  The two must agree.
    """

    n: int
    k: int
    acyclic: bool
    nonleading_max: float
    vanish: bool
    agree: bool
    det_value: float

    @property
    def holds(self) -> bool:
        return self.acyclic


def detr_criterion(spec_or_bc, n: int | None = None, k: int | None = None) -> DetrReport:
    """Accepts a ProblemSpec with linear wall reflection, or the (B, C)
    matrices directly together with n and k."""
    if isinstance(spec_or_bc, ProblemSpec):
        spec = spec_or_bc
        if not isinstance(spec.boundary, LinearReflection):
            raise ProblemError(
                "determinant criterion applies to linear wall reflection only"
            )
        B = [list(row) for row in spec.boundary.B]
        C = [list(row) for row in spec.boundary.C]
        n, k = spec.n, spec.k
    else:
        B, C = spec_or_bc
        if n is None or k is None:
            raise ValueError("n and k are required with raw matrices")
        B = [list(row) for row in B]
        C = [list(row) for row in C]
    if n > 9:
        raise ValueError("determinant expansion supported for n <= 9")

    # route 1: cycle search in the directed wall-coupling graph
    adj = {m: [] for m in range(1, n + 1)}
    for a in range(n - k):
        for b in range(k):
            if abs(B[a][b]) > TOL_R:
                adj[1 + b].append(k + 1 + a)
    for a in range(k):
        for b in range(n - k):
            if abs(C[a][b]) > TOL_R:
                adj[k + 1 + b].append(1 + a)
    color = {m: 0 for m in adj}
    has_cycle = False

    def dfs(node):
        nonlocal has_cycle
        color[node] = 1
        for nb in adj[node]:
            if color[nb] == 1:
                has_cycle = True
            elif color[nb] == 0:
                dfs(nb)
        color[node] = 2

    for m in adj:
        if color[m] == 0:
            dfs(m)

    # route 2: expansion of det R, R indexed with families k+1..n first
    R = np.eye(n)
    for a in range(n - k):
        for b in range(k):
            R[a, (n - k) + b] = B[a][b]
    for a in range(k):
        for b in range(n - k):
            R[(n - k) + a, b] = C[a][b]
    worst = 0.0
    for perm in permutations(range(n)):
        if all(perm[m] == m for m in range(n)):
            continue
        prod = 1.0
        for m in range(n):
            prod *= R[m, perm[m]]
            if prod == 0.0:
                break
        worst = max(worst, abs(prod))
    vanish = worst <= 1e-9

    return DetrReport(
        n=n,
        k=k,
        acyclic=not has_cycle,
        nonleading_max=float(worst),
        vanish=vanish,
        agree=(not has_cycle) == vanish,
        det_value=float(np.linalg.det(R)),
    )
