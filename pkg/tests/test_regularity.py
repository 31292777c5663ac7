"""Finite-difference smoothness indicator and the slab report.

Expected seminorm values are closed forms of the sampled profiles:
m-th differences of sin are exactly 4 sin^2(pi h/2) |sin|, a lattice
kink gives exactly 2/h at order two, and the lacunary cosine cascade
was measured on exact samples before the module existed.
"""

import math

import numpy as np
import pytest

from hypstrip.problem import parse_problem
from hypstrip.regularity import (
    RegularityError,
    classify,
    resolve_ladder,
    rough_initial,
    smoothing_report,
    smoothness_indicator,
)
from hypstrip.solver import SolutionGrid

LADDER = (1 / 128, 1 / 256, 1 / 512)


def analytic_grid(fn, nx=512, nt=512, t_max=1.0):
    xs = np.linspace(0.0, 1.0, nx + 1)
    ts = np.linspace(0.0, t_max, nt + 1)
    vals = fn(xs[None, :], ts[:, None]) * np.ones((ts.size, xs.size))
    return SolutionGrid(xs=xs, ts=ts, values=vals[None, :, :], k=0)


MANUFACTURED_LONG = """
n = 2
k = 1
t_max = 2.0
lambda = ["-1", "1"]
A = [["0", "1"], ["1", "0"]]
g = [
  "cos(pi*x + t)*(1 - pi) + sin(pi*x + t)",
  "cos(pi*x + t)*(1 + pi) + sin(pi*x + t)",
]

[boundary]
kind = "classical"
h = ["sin(pi + t)", "sin(t)"]

[initial]
regular = ["sin(pi*x)", "sin(pi*x)"]
"""


# ---------------------------------------------------------------------------
# indicator on exactly sampled profiles


def test_indicator_sin_second_order():
    sol = analytic_grid(lambda x, t: np.sin(np.pi * (x - t)))
    res = smoothness_indicator(sol, (0.2, 0.6), 2, LADDER)
    assert res.order == 2
    for h, s in res.s_values:
        exact = 4.0 * math.sin(math.pi * h / 2.0) ** 2 / h**2
        assert abs(s - exact) < 1e-9 * exact
        assert abs(s - math.pi**2) < 0.01 * math.pi**2
    assert res.classification == "C^2-consistent"


def test_indicator_kink_orders():
    sol = analytic_grid(lambda x, t: np.abs(x - 0.5 - t))
    res1 = smoothness_indicator(sol, (0.1, 0.3), 1, LADDER)
    # first differences of a Lipschitz kink stay bounded by the slope
    for h, s in res1.s_values:
        assert abs(s - 1.0) < 1e-12
    assert res1.classification == "C^1-consistent"
    # the kink is caught one order up: second difference 2h over h^2
    res2 = smoothness_indicator(sol, (0.1, 0.3), 2, LADDER)
    for h, s in res2.s_values:
        assert abs(s - 2.0 / h) < 1e-9 / h
    assert res2.classification == "not C^2-consistent"


def test_indicator_zero_profile():
    sol = analytic_grid(lambda x, t: 0.0 * x)
    for m in (1, 2, 3):
        res = smoothness_indicator(sol, (0.25, 0.5), m, LADDER)
        assert all(s == 0.0 for _, s in res.s_values)
        assert res.classification == f"C^{m}-consistent"


def test_indicator_polynomial_exactness():
    sol = analytic_grid(lambda x, t: (x + 2 * t) ** 2 - 3 * x * t + x)
    res = smoothness_indicator(sol, (0.2, 0.5), 3, LADDER)
    # pure float cancellation: ~ulp(u)/h^3 at the coarse rung
    assert all(s < 1e-6 for _, s in res.s_values)


def test_indicator_never_reads_outside_slab():
    sol = analytic_grid(lambda x, t: np.sin(np.pi * (x - t)))
    poisoned = sol.values.copy()
    below = sol.ts < 0.2 - 1e-12
    above = sol.ts > 0.8 + 1e-12
    poisoned[:, below, :] = np.nan
    poisoned[:, above, :] = np.nan
    dirty = SolutionGrid(xs=sol.xs, ts=sol.ts, values=poisoned, k=0)
    a = smoothness_indicator(sol, (0.2, 0.6), 2, LADDER)
    b = smoothness_indicator(dirty, (0.2, 0.6), 2, LADDER)
    assert a.s_values == b.s_values
    assert all(np.isfinite(s) for _, s in b.s_values)


def test_indicator_input_errors():
    sol = analytic_grid(lambda x, t: x * t)
    with pytest.raises(RegularityError):
        smoothness_indicator(sol, (0.8, 0.5), 1, LADDER)  # past t_max
    with pytest.raises(RegularityError):
        smoothness_indicator(sol, (-0.1, 0.2), 1, LADDER)
    with pytest.raises(RegularityError):
        smoothness_indicator(sol, (0.2, 0.3), 1, (1 / 100,))  # not on lattice
    with pytest.raises(RegularityError):
        # slab thinner than one coarse step at the requested order
        smoothness_indicator(sol, (0.2, 1 / 300), 2, (1 / 128,))


# ---------------------------------------------------------------------------
# classification rule


def test_classify_rule_cases():
    ladder = LADDER
    flat = tuple(zip(ladder, (3.0, 3.1, 2.9)))
    assert classify(flat, 1) == "C^1-consistent"
    zero = tuple(zip(ladder, (0.0, 0.0, 0.0)))
    assert classify(zero, 2) == "C^2-consistent"
    doubling = tuple(zip(ladder, (1.0, 2.05, 4.2)))
    assert classify(doubling, 1) == "not C^1-consistent"
    middling = tuple(zip(ladder, (1.0, 1.5, 2.2)))
    assert classify(middling, 1) == "inconclusive"


def test_classify_normalizes_non_halving_ladders():
    # one step of four means two halvings: 4x growth is rate 2 per halving
    pairs = ((1 / 64, 1.0), (1 / 256, 4.1))
    assert classify(pairs, 1) == "not C^1-consistent"


# ---------------------------------------------------------------------------
# rough profile generator


def test_rough_profile_exact_sampling_growth():
    expr = rough_initial()  # 13 terms, growth 1.15, windowed
    from hypstrip.expressions import parse

    tree = parse(expr)
    xs = np.linspace(0.0, 1.0, 513)
    prof = tree.evaluate({"x": xs})
    assert abs(prof[0]) < 1e-12 and abs(prof[-1]) < 1e-12  # compatible corners
    sol = SolutionGrid(
        xs=xs,
        ts=np.linspace(0.0, 1.0, 513),
        values=np.broadcast_to(prof, (1, 513, 513)).copy(),
        k=0,
    )
    res = smoothness_indicator(sol, (0.2, 0.4), 1, LADDER)
    ss = [s for _, s in res.s_values]
    for a, b in zip(ss, ss[1:]):
        assert 2.0 <= b / a <= 2.6  # measured 2.31 on exact samples
    assert res.classification == "not C^1-consistent"


def test_rough_profile_periodic_wraps():
    expr = rough_initial(periodic=True)
    from hypstrip.expressions import parse

    tree = parse(expr)
    assert abs(tree.evaluate({"x": 0.0}) - tree.evaluate({"x": 1.0})) < 1e-9


# ---------------------------------------------------------------------------
# report on solver output


def test_report_smooth_manufactured():
    spec = parse_problem(MANUFACTURED_LONG)
    report = smoothing_report(
        spec,
        m_max=1,
        j_max=1,
        ladder=(1 / 32, 1 / 64, 1 / 128),
        delta=0.3,
        margin=0.1,
    )
    assert report.verdict.status == "holds"
    assert abs(report.t_values[0] - 1.0) < 1e-6
    assert len(report.slabs) == 2  # below and above T_1
    for slab in report.slabs:
        assert slab.classification == "C^1-consistent"
        assert len(slab.s_values) == 3


def test_report_inconclusive_when_crossing_blocked():
    text = MANUFACTURED_LONG.replace("t_max = 2.0", "t_max = 0.5")
    spec = parse_problem(text)
    report = smoothing_report(spec, m_max=1, j_max=1, ladder=(1 / 32, 1 / 64))
    assert math.isinf(report.t_values[0])
    assert all(s.classification == "inconclusive" for s in report.slabs)
    assert all(len(s.s_values) == 0 for s in report.slabs)


def test_rough_classical_contrast_across_T1():
    text = """
n = 2
k = 1
t_max = 2.0
lambda = ["-2", "1"]
A = [["0", "0"], ["0", "0"]]
g = ["0", "0"]

[boundary]
kind = "classical"
h = ["0", "0"]

[initial]
regular = ["{prof}", "{prof}"]
""".replace("{prof}", rough_initial())
    spec = parse_problem(text)
    ladder = (1 / 64, 1 / 128, 1 / 256)
    solves = resolve_ladder(spec, ladder, tol=1e-9)
    below = [smoothness_indicator(solves[h], (0.0, 0.8), 1, (h,)) for h in ladder]
    above = [smoothness_indicator(solves[h], (1.1, 0.5), 1, (h,)) for h in ladder]
    sb = [r.s_values[0][1] for r in below]
    for a, b in zip(sb, sb[1:]):
        assert b / a >= 2.0
    assert classify(tuple(zip(ladder, sb)), 1) == "not C^1-consistent"
    # all data lines exit by t = 1 and the walls feed zero afterwards
    sa = [r.s_values[0][1] for r in above]
    assert classify(tuple(zip(ladder, sa)), 1) == "C^1-consistent"


def test_rough_periodic_never_settles():
    # t_max chosen so every ladder step divides it: feet stay on the
    # lattice and transport does not smooth the cascade
    text = """
n = 1
k = 0
t_max = 2.25
lambda = ["1"]
A = [["0"]]
g = ["0"]

[boundary]
kind = "linear_nonlocal"
p = [["1"]]
r = ["0"]

[initial]
regular = ["{prof}"]
""".replace("{prof}", rough_initial(periodic=True))
    spec = parse_problem(text)
    ladder = (1 / 64, 1 / 128, 1 / 256)
    solves = resolve_ladder(spec, ladder, tol=1e-9)
    for slab in ((0.1, 0.5), (1.5, 0.5)):
        ss = [
            smoothness_indicator(solves[h], slab, 1, (h,)).s_values[0][1]
            for h in ladder
        ]
        assert classify(tuple(zip(ladder, ss)), 1) == "not C^1-consistent"
