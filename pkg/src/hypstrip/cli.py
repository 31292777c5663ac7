"""Command line front end.

Subcommands: ``solve`` (continuous data), ``analyze`` (path criteria),
``delta`` (singular data, eps-series), ``wave`` (second-order problems
through the first-order reduction), ``report`` (smoothing summary with
seminorm ladders).

Exit codes: 0 success, 2 validation or unsupported input, 3 the solver
failed to converge, 4 an inconclusive verdict under
``--fail-on-inconclusive``.  Every nonzero exit prints a single JSON
line to stderr with ``code``, ``kind``, and ``message``.

JSON and CSV outputs are byte-identical across runs on the same input;
SVG plots are decorative and excluded from that guarantee.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from . import reports
from .deltawave import DeltaWaveError, delta_wave
from .paths import influence_domain
from .problem import ProblemError, check_compatibility, parse_problem
from .regularity import RegularityError, smoothing_report
from .solver import SolverError, picard_solve
from .wave import lift_wave_solution

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CONVERGENCE = 3
EXIT_INCONCLUSIVE = 4

DEFAULT_PAIRINGS = ("t*sin(pi*x)", "x*(1 - x)")


class CliError(Exception):
    """Carries an exit code and a machine-readable diagnostic."""

    def __init__(self, code: int, kind: str, message: str, **extra):
        super().__init__(message)
        self.code = code
        self.kind = kind
        self.extra = extra


class _Parser(argparse.ArgumentParser):
    # argparse would sys.exit on its own; route through the one
    # diagnostic channel instead
    def error(self, message):
        raise CliError(EXIT_VALIDATION, "usage", message)


@dataclass(frozen=True)
class RunConfig:
    """Validated invocation: subcommand, input file, output directory,
    and the numeric overrides."""

    command: str
    input: Path
    outdir: Path
    grid: tuple = (128, 128)
    tol: float = 1e-8
    eps: tuple = (0.1, 0.05, 0.025)
    depth: int = 64
    horizon: float | None = None
    resolution: int = 256
    m_max: int = 2
    seed: int | None = None
    fail_on_inconclusive: bool = False


def _diagnostic(code: int, kind: str, message: str, **extra):
    payload = {"code": code, "kind": kind, "message": message}
    payload.update(extra)
    print(json.dumps(reports._plain(payload), sort_keys=True), file=sys.stderr)


def _write(path: Path, text: str):
    path.write_text(text)


def _config(args) -> RunConfig:
    nx, nt = args.grid
    if not (8 <= nx <= 8192 and 1 <= nt <= 8192):
        raise CliError(EXIT_VALIDATION, "usage", "--grid out of range [8, 8192]")
    if not (0.0 < args.tol <= 0.1):
        raise CliError(EXIT_VALIDATION, "usage", "--tol must lie in (0, 0.1]")
    if args.depth < 1 or args.resolution < 16:
        raise CliError(EXIT_VALIDATION, "usage", "--depth/--resolution too small")
    if args.horizon is not None and args.horizon <= 0:
        raise CliError(EXIT_VALIDATION, "usage", "--horizon must be positive")
    if any(e <= 0 for e in args.eps):
        raise CliError(EXIT_VALIDATION, "usage", "--eps values must be positive")
    if not (1 <= args.m_max <= 4):
        raise CliError(EXIT_VALIDATION, "usage", "--m-max must lie in [1, 4]")
    path = Path(args.input)
    if not path.is_file():
        raise CliError(EXIT_VALIDATION, "usage", f"no such problem file: {path}")
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    return RunConfig(
        command=args.command,
        input=path,
        outdir=outdir,
        grid=(nx, nt),
        tol=args.tol,
        eps=tuple(args.eps),
        depth=args.depth,
        horizon=args.horizon,
        resolution=args.resolution,
        m_max=args.m_max,
        seed=args.seed,
        fail_on_inconclusive=args.fail_on_inconclusive,
    )


def _load(cfg: RunConfig):
    try:
        spec = parse_problem(cfg.input.read_text())
    except ProblemError as exc:
        raise CliError(
            EXIT_VALIDATION, "validation", str(exc), path=getattr(exc, "path", "")
        )
    return spec


def _solve_outputs(cfg: RunConfig, spec, sol, trace, prefix: str = "solution"):
    summary = reports.solve_summary(spec, sol, cfg.tol)
    if cfg.seed is not None:
        summary["seed"] = cfg.seed
    _write(cfg.outdir / f"{prefix}.csv", reports.grid_csv(sol))
    _write(cfg.outdir / "trace.csv", reports.trace_csv(trace))
    _write(cfg.outdir / "residuals.json", reports.dumps_json(summary))
    if not sol.converged:
        raise CliError(
            EXIT_CONVERGENCE,
            "convergence",
            "iteration did not reach the tolerance",
            iterations=list(sol.iterations),
            contraction=list(sol.contraction),
        )


def cmd_solve(cfg: RunConfig) -> int:
    spec = _load(cfg)
    if spec.initial.atoms:
        raise CliError(
            EXIT_VALIDATION,
            "validation",
            "initial data carries point singularities; use the delta subcommand",
        )
    compat = check_compatibility(spec)
    if not compat.ok:
        raise CliError(
            EXIT_VALIDATION,
            "compatibility",
            "initial and boundary data disagree at a corner",
            residuals=list(compat.residuals),
            tol=compat.tol,
        )
    sol, trace = picard_solve(spec, grid=cfg.grid, tol=cfg.tol)
    _solve_outputs(cfg, spec, sol, trace)
    return EXIT_OK


def cmd_analyze(cfg: RunConfig) -> int:
    spec = _load(cfg)
    rep = reports.analyze_report(
        spec, horizon=cfg.horizon, depth_max=cfg.depth, resolution=cfg.resolution
    )
    if cfg.seed is not None:
        rep["seed"] = cfg.seed
    _write(cfg.outdir / "analysis.json", reports.dumps_json(rep))
    _write(cfg.outdir / "paths.dot", reports.dot_graph(spec))
    raster = influence_domain(spec, resolution=cfg.resolution, horizon=cfg.horizon)
    for i in range(spec.n):
        _write(
            cfg.outdir / f"influence_u{i + 1}_plain.pgm",
            reports.pgm_text(raster.plain[i]),
        )
        _write(
            cfg.outdir / f"influence_u{i + 1}_strict.pgm",
            reports.pgm_text(raster.strict[i]),
        )
    statuses = (rep["iota"]["status"], rep["iota2"]["status"])
    if cfg.fail_on_inconclusive and "inconclusive" in statuses:
        raise CliError(
            EXIT_INCONCLUSIVE,
            "inconclusive",
            "path search hit its exploration caps before reaching a verdict",
            iota=rep["iota"]["status"],
            iota2=rep["iota2"]["status"],
        )
    return EXIT_OK


def cmd_delta(cfg: RunConfig) -> int:
    spec = _load(cfg)
    if not spec.initial.atoms:
        raise CliError(
            EXIT_VALIDATION,
            "validation",
            "no point singularities declared; use the solve subcommand",
        )
    try:
        dec = delta_wave(
            spec,
            grid=cfg.grid,
            eps_list=cfg.eps,
            test_functions=DEFAULT_PAIRINGS,
            tol=cfg.tol,
            resolution=cfg.resolution,
        )
    except DeltaWaveError as exc:
        raise CliError(EXIT_VALIDATION, "validation", str(exc))
    rep = reports.delta_report(dec)
    if cfg.seed is not None:
        rep["seed"] = cfg.seed
    _write(cfg.outdir / "delta.json", reports.dumps_json(rep))
    _write(cfg.outdir / "w.csv", reports.grid_csv(dec.w))
    _write(cfg.outdir / "j_star.pgm", reports.pgm_text(dec.jsets.j_star))
    _write(cfg.outdir / "j.pgm", reports.pgm_text(dec.jsets.j))
    for e, mask in sorted(dec.jsets.j_eps.items(), reverse=True):
        _write(cfg.outdir / f"j_eps_{e:g}.pgm", reports.pgm_text(mask))
    reports.save_series_svg(
        cfg.outdir / "delta_series.svg",
        [("|u - z - w| in L1", dec.l1), ("sup off the skeleton", dec.sup_k)],
        "eps-series diagnostics",
        "eps",
        "norm",
    )
    return EXIT_OK


def cmd_wave(cfg: RunConfig) -> int:
    spec = _load(cfg)
    if spec.origin != "wave":
        raise CliError(
            EXIT_VALIDATION,
            "validation",
            "input does not declare a [wave] problem; use solve for first-order systems",
        )
    sol, trace = picard_solve(spec, grid=cfg.grid, tol=cfg.tol)
    lifted = lift_wave_solution(sol, spec)
    _write(cfg.outdir / "displacement.csv", reports.grid_csv(lifted))
    _solve_outputs(cfg, spec, sol, trace, prefix="system")
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    spec = _load(cfg)
    if spec.initial.atoms:
        raise CliError(
            EXIT_VALIDATION,
            "validation",
            "smoothing ladders need continuous data; use the delta subcommand",
        )
    try:
        rep = smoothing_report(spec, m_max=cfg.m_max, tol=cfg.tol)
    except RegularityError as exc:
        raise CliError(EXIT_VALIDATION, "validation", str(exc))
    bundle = reports.smoothing_bundle(rep, spec)
    if cfg.seed is not None:
        bundle["seed"] = cfg.seed
    _write(cfg.outdir / "report.json", reports.dumps_json(bundle))
    series = [
        (f"{s.label} m={s.order}", list(s.s_values)) for s in rep.slabs if s.s_values
    ]
    if series:
        reports.save_series_svg(
            cfg.outdir / "ladders.svg",
            series,
            "difference-quotient ladders",
            "h",
            "s_m(h)",
        )
    if cfg.fail_on_inconclusive:
        slots = [rep.verdict.status] + [s.classification for s in rep.slabs]
        if "inconclusive" in slots:
            raise CliError(
                EXIT_INCONCLUSIVE,
                "inconclusive",
                "some slab or path verdict stayed inconclusive",
                slots=slots,
            )
    return EXIT_OK


_COMMANDS = {
    "solve": cmd_solve,
    "analyze": cmd_analyze,
    "delta": cmd_delta,
    "wave": cmd_wave,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="hypstrip",
        description="simulate and analyze hyperbolic initial-boundary problems on the strip",
    )
    common = _Parser(add_help=False)
    common.add_argument("input", help="problem description (TOML)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument(
        "--grid",
        nargs=2,
        type=int,
        default=(128, 128),
        metavar=("NX", "NT"),
        help="space and time cell counts",
    )
    common.add_argument("--tol", type=float, default=1e-8)
    common.add_argument(
        "--eps",
        nargs="+",
        type=float,
        default=[0.1, 0.05, 0.025],
        help="mollification widths, strictly decreasing",
    )
    common.add_argument("--depth", type=int, default=64, help="reflection depth cap")
    common.add_argument(
        "--horizon", type=float, default=None, help="analysis horizon (default t_max)"
    )
    common.add_argument("--resolution", type=int, default=256, help="raster cells")
    common.add_argument("--m-max", type=int, default=2, help="highest ladder order")
    common.add_argument("--seed", type=int, default=None, help="recorded in reports")
    common.add_argument(
        "--fail-on-inconclusive",
        action="store_true",
        help="exit 4 when a verdict stays inconclusive",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="grid solution and wall traces")
    sub.add_parser("analyze", parents=[common], help="path criteria and rasters")
    sub.add_parser("delta", parents=[common], help="singular part and eps-series")
    sub.add_parser("wave", parents=[common], help="second-order problem via reduction")
    sub.add_parser("report", parents=[common], help="smoothing ladders around each T_j")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _config(args)
        return _COMMANDS[cfg.command](cfg)
    except CliError as exc:
        _diagnostic(exc.code, exc.kind, str(exc), **exc.extra)
        return exc.code
    except ProblemError as exc:
        _diagnostic(
            EXIT_VALIDATION, "validation", str(exc), path=getattr(exc, "path", "")
        )
        return EXIT_VALIDATION
    except SolverError as exc:
        _diagnostic(EXIT_CONVERGENCE, "solver", str(exc))
        return EXIT_CONVERGENCE
    except ValueError as exc:
        # out-of-range knobs surface as plain ValueErrors downstream
        _diagnostic(EXIT_VALIDATION, "validation", str(exc))
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
