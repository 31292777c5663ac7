"""Report assembly and deterministic serialization.

JSON and CSV emissions are byte-reproducible: keys are sorted, floats
go through repr (shortest round-trip form), numpy objects are converted
to plain Python, and infinities become the string "inf" since strict
JSON has no spelling for them.  SVG plots are best-effort furniture and
carry no timestamps.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .paths import (
    check_iota,
    check_iota2,
    compute_Tj,
    detr_criterion,
    reflection_graph,
)
from .problem import ProblemSpec, check_compatibility

SCHEMA_VERSION = "1"

__all__ = [
    "SCHEMA_VERSION",
    "dumps_json",
    "grid_csv",
    "trace_csv",
    "pgm_text",
    "dot_graph",
    "verdict_dict",
    "analyze_report",
    "solve_summary",
    "delta_report",
    "smoothing_bundle",
    "save_series_svg",
]


def _plain(obj):
    """Recursively convert to JSON-safe plain Python."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def grid_csv(sol) -> str:
    """Row-major (t outer, x inner) dump of every component."""
    n = sol.values.shape[0]
    lines = ["t,x," + ",".join(f"u{i + 1}" for i in range(n))]
    for r, t in enumerate(sol.ts):
        tr = repr(float(t))
        for p, x in enumerate(sol.xs):
            vals = ",".join(repr(float(sol.values[i, r, p])) for i in range(n))
            lines.append(f"{tr},{repr(float(x))},{vals}")
    return "\n".join(lines) + "\n"


def trace_csv(trace) -> str:
    n = trace.values.shape[0]
    lines = ["t," + ",".join(f"v{j + 1}" for j in range(n))]
    for r, t in enumerate(trace.ts):
        vals = ",".join(repr(float(trace.values[j, r])) for j in range(n))
        lines.append(f"{repr(float(t))},{vals}")
    return "\n".join(lines) + "\n"


def pgm_text(mask: np.ndarray) -> str:
    """ASCII PGM (P2), first raster row at t = 0, 255 marks True."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    rows = [" ".join("255" if v else "0" for v in row) for row in mask]
    return f"P2\n{w} {h}\n255\n" + "\n".join(rows) + "\n"


def dot_graph(spec: ProblemSpec) -> str:
    """Reflection edges as a directed graph over the components."""
    lines = ["digraph reflections {"]
    for i in range(1, spec.n + 1):
        side = "left" if i <= spec.k else "right"
        lines.append(f'  u{i} [label="u{i} ({side}-mover)"];')
    edges = sorted(reflection_graph(spec), key=lambda e: (e.src, e.dst))
    for e in edges:
        lines.append(f'  u{e.src} -> u{e.dst} [label="x={e.wall:g} {e.kind}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def verdict_dict(v) -> dict:
    out = {
        "status": v.status,
        "t_prime": v.t_prime,
        "explored": v.explored,
        "horizon": v.horizon,
        "depth_max": v.depth_max,
    }
    if v.witness is not None:
        out["witness"] = [
            {
                "component": leg.comp,
                "enter": list(leg.enter),
                "arrive": list(leg.arrive),
                "alive": leg.alive,
            }
            for leg in v.witness
        ]
    return out


def analyze_report(
    spec: ProblemSpec,
    horizon: float | None = None,
    depth_max: int = 64,
    resolution: int = 256,
    j_count: int = 4,
) -> dict:
    out = {
        "schema_version": SCHEMA_VERSION,
        "n": spec.n,
        "k": spec.k,
        "iota": verdict_dict(check_iota(spec, horizon=horizon, depth_max=depth_max)),
        "iota2": verdict_dict(
            check_iota2(
                spec, horizon=horizon, depth_max=depth_max, resolution=resolution
            )
        ),
        "T": list(compute_Tj(spec, j_count)),
        "edges": [
            {"src": e.src, "dst": e.dst, "wall": e.wall, "kind": e.kind}
            for e in sorted(reflection_graph(spec), key=lambda e: (e.src, e.dst))
        ],
    }
    if spec.boundary.kind == "linear_reflection":
        rep = detr_criterion(spec)
        out["detR"] = {
            "holds": rep.holds,
            "acyclic": rep.acyclic,
            "vanish": rep.vanish,
            "agree": rep.agree,
            "nonleading_max": rep.nonleading_max,
            "det_value": rep.det_value,
        }
    return out


def solve_summary(spec: ProblemSpec, sol, tol: float) -> dict:
    compat = check_compatibility(spec)
    return {
        "schema_version": SCHEMA_VERSION,
        "converged": bool(sol.converged),
        "iterations": list(sol.iterations),
        "contraction": list(sol.contraction),
        "slab_edges": list(sol.slab_edges),
        "warnings": list(sol.warnings),
        "grid": {"nx": int(sol.xs.size - 1), "nt": int(sol.ts.size - 1)},
        "tol": tol,
        "compatibility": {
            "ok": compat.ok,
            "residuals": list(compat.residuals),
            "tol": compat.tol,
        },
    }


def _polyline(curve, limit: int = 129) -> list:
    taus, xis = curve.taus, curve.xis
    if taus.size > limit:
        idx = np.linspace(0, taus.size - 1, limit).round().astype(int)
        taus, xis = taus[idx], xis[idx]
    return [[float(t), float(x)] for t, x in zip(taus, xis)]


def delta_report(dec) -> dict:
    atoms = []
    for a in dec.atoms:
        idx = np.linspace(0, a.taus.size - 1, min(a.taus.size, 65)).round().astype(int)
        atoms.append(
            {
                "component": a.component,
                "order": a.order,
                "generation": a.generation,
                "parent": a.parent,
                "carrier": _polyline(a.curve),
                "t": [float(v) for v in a.taus[idx]],
                "amplitudes": [
                    [float(v) for v in a.amps[q, idx]] for q in range(a.order + 1)
                ],
            }
        )
    return {
        "schema_version": SCHEMA_VERSION,
        "eps": list(dec.eps_list),
        "atoms": atoms,
        "l1_split_residual": [[e, v] for e, v in dec.l1],
        "sup_off_skeleton": [[e, v] for e, v in dec.sup_k],
        "pairings": {k: [[e, v] for e, v in rows] for k, rows in dec.pairings.items()},
        "flags": list(dec.flags),
        "remainder": {
            "converged": bool(dec.w.converged),
            "warnings": list(dec.w.warnings),
        },
    }


def smoothing_bundle(report, spec: ProblemSpec) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "headline": report.headline,
        "verdict": verdict_dict(report.verdict),
        "T": list(report.t_values),
        "ladder": list(report.ladder),
        "slabs": [
            {
                "label": s.label,
                "order": s.order,
                "slab": list(s.slab),
                "s_values": [[h, v] for h, v in s.s_values],
                "classification": s.classification,
            }
            for s in report.slabs
        ],
    }


def save_series_svg(path, series, title: str, xlabel: str, ylabel: str):
    """Log-log line plot of one or more (label, [(x, y), ...]) series.

    Quietly does nothing if matplotlib is unavailable; plots are
    furniture, the JSON carries the data.
    """
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except Exception:
        return False
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, pts in series:
        xs = [p[0] for p in pts]
        ys = [max(p[1], 1e-300) for p in pts]
        ax.loglog(xs, ys, marker="o", label=label)
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, which="both", alpha=0.3)
    if len(series) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return True
