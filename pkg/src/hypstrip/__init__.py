"""Simulator and analyzer for first-order hyperbolic systems on the
unit strip: characteristics-based solving, boundary-path analysis,
delta-wave transport and empirical regularity measurement."""

from .problem import (
    Atom,
    InitialData,
    ProblemError,
    ProblemSpec,
    check_compatibility,
    parse_problem,
)
from .characteristics import CharCurve, CurveError, trace_characteristic
from .solver import SolutionGrid, SolverError, picard_solve
from .paths import (
    PathVerdict,
    check_iota,
    check_iota2,
    compute_Tj,
    detr_criterion,
    influence_domain,
    path_graph,
    reflection_graph,
)
from .deltawave import DeltaWaveError, Mollifier, compute_J_sets, delta_wave, solve_singular
from .regularity import (
    RegularityError,
    classify,
    rough_initial,
    smoothing_report,
    smoothness_indicator,
)
from .wave import WaveProblem, lift_wave_solution, reduce_wave, wave_problem_from_table

__version__ = "0.1.0"

__all__ = [
    "Atom",
    "CharCurve",
    "CurveError",
    "DeltaWaveError",
    "InitialData",
    "Mollifier",
    "PathVerdict",
    "ProblemError",
    "ProblemSpec",
    "RegularityError",
    "SolutionGrid",
    "SolverError",
    "WaveProblem",
    "check_compatibility",
    "check_iota",
    "check_iota2",
    "classify",
    "compute_J_sets",
    "compute_Tj",
    "delta_wave",
    "detr_criterion",
    "influence_domain",
    "lift_wave_solution",
    "parse_problem",
    "path_graph",
    "picard_solve",
    "reduce_wave",
    "reflection_graph",
    "rough_initial",
    "smoothing_report",
    "smoothness_indicator",
    "solve_singular",
    "trace_characteristic",
    "wave_problem_from_table",
    "__version__",
]
