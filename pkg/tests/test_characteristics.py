"""Characteristic tracing: hit times, weights, intersections, caching."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from hypstrip.characteristics import (
    CurveError,
    TangencyError,
    curve_to_csv,
    exp_weight,
    intersect,
    trace_characteristic,
)
from hypstrip.problem import parse_problem


def make_spec(lams, k, A=None, t_max=2.0):
    n = len(lams)
    if A is None:
        A = [["0"] * n for _ in range(n)]
    a_rows = ", ".join("[" + ", ".join(f'"{e}"' for e in row) + "]" for row in A)
    lam_row = ", ".join(f'"{s}"' for s in lams)
    zeros = ", ".join(['"0"'] * n)
    return parse_problem(
        f"""
n = {n}
k = {k}
t_max = {t_max}
lambda = [{lam_row}]
A = [{a_rows}]
g = [{zeros}]

[boundary]
kind = "classical"
h = [{zeros}]

[initial]
regular = [{zeros}]
"""
    )


# ---------------------------------------------------------------------------
# hit times


def test_backward_hit_right_mover():
    spec = make_spec(["1"], k=0)
    c = trace_characteristic(spec, 1, (0.5, 1.0))
    assert c.side == "x=0"
    assert c.t_i == pytest.approx(0.5, abs=1e-10)


def test_backward_hit_left_mover():
    spec = make_spec(["-1", "1"], k=1)
    c = trace_characteristic(spec, 1, (0.5, 1.0))
    assert c.side == "x=1"
    assert c.t_i == pytest.approx(0.5, abs=1e-10)


def test_backward_hit_affine_speed_closed_form():
    # lambda = 1 + x: xi(tau) = (1+x0) e^{tau-t0} - 1 = e^{tau-1} - 1 along
    # the curve through (1, 1+log 2); the wall x=0 is reached at tau = 1
    spec = make_spec(["1 + x"], k=0, t_max=3.0)
    c = trace_characteristic(spec, 1, (1.0, 1.0 + math.log(2.0)))
    assert c.side == "x=0"
    assert c.t_i == pytest.approx(1.0, abs=1e-9)


def test_backward_exit_through_initial_line():
    spec = make_spec(["1"], k=0)
    c = trace_characteristic(spec, 1, (0.9, 0.3))
    assert c.side == "t=0"
    assert c.t_i == 0.0
    assert c.x_exit == pytest.approx(0.6, abs=1e-10)


def test_anchor_identity_is_exact():
    spec = make_spec(["-1", "1"], k=1)
    for i, x, t in [(1, 0.3, 0.8), (2, 0.71, 1.3)]:
        c = trace_characteristic(spec, i, (x, t))
        assert c.xis[0] == x and c.taus[0] == t
        assert c.xi(t) == pytest.approx(x, abs=0.0)


def test_monotone_exit_walls():
    # left-movers leave backward through x=1 or t=0, right-movers x=0 or t=0
    spec = make_spec(["-1.5 - 0.2*x", "0.5 + 0.3*x"], k=1, t_max=3.0)
    rng = np.random.default_rng(2)
    for _ in range(20):
        x, t = rng.uniform(0.01, 0.99), rng.uniform(0.0, 3.0)
        c1 = trace_characteristic(spec, 1, (x, t))
        c2 = trace_characteristic(spec, 2, (x, t))
        assert c1.side in ("x=1", "t=0")
        assert c2.side in ("x=0", "t=0")
        # xi strictly monotone in tau per the speed sign
        assert np.all(np.diff(c1.xis) * np.sign(np.diff(c1.taus)) < 0)
        assert np.all(np.diff(c2.xis) * np.sign(np.diff(c2.taus)) > 0)


def test_semigroup_property():
    spec = make_spec(["1 + 0.5*sin(pi*x)*cos(t)"], k=0, t_max=2.0)
    c = trace_characteristic(spec, 1, (0.9, 1.7))
    tau1 = 1.0
    x1 = c.xi(tau1)
    c2 = trace_characteristic(spec, 1, (x1, tau1))
    for tau2 in np.linspace(c2.tau_min, tau1, 7):
        assert c2.xi(tau2) == pytest.approx(c.xi(tau2), abs=1e-9)


def test_convergence_order_at_least_three():
    spec = make_spec(["1 + x"], k=0, t_max=3.0)
    errors = []
    for h in (1 / 8, 1 / 16, 1 / 32):
        c = trace_characteristic(
            spec, 1, (1.0, 1.0 + math.log(2.0)), step=h, use_cache=False
        )
        exact = np.exp(c.taus - 1.0) - 1.0
        errors.append(np.max(np.abs(c.xis - exact)))
    assert errors[0] / errors[1] >= 8.0
    assert errors[1] / errors[2] >= 8.0


def test_forward_direction_reaches_horizon_or_wall():
    spec = make_spec(["-1", "1"], k=1, t_max=0.3)
    c = trace_characteristic(spec, 2, (0.5, 0.0), direction="forward")
    assert c.side == "t=max"  # only 0.3 of travel, wall at distance 0.5
    c2 = trace_characteristic(spec, 2, (0.9, 0.0), direction="forward")
    assert c2.side == "x=1"
    assert c2.t_exit == pytest.approx(0.1, abs=1e-9)


def test_anchor_outside_strip_rejected():
    spec = make_spec(["1"], k=0)
    with pytest.raises(CurveError):
        trace_characteristic(spec, 1, (1.5, 0.5))
    assert issubclass(TangencyError, CurveError)


# ---------------------------------------------------------------------------
# caching


def test_autonomous_curves_shift_in_time():
    spec = make_spec(["1 + 0.25*x"], k=0, t_max=3.0)
    a = trace_characteristic(spec, 1, (0.4, 2.5))
    b = trace_characteristic(spec, 1, (0.4, 1.5))
    # same geometry shifted by 1 in time
    for tau in np.linspace(b.tau_min + 1e-6, b.tau_max, 9):
        assert b.xi(tau) == pytest.approx(a.xi(tau + 1.0), abs=1e-9)


def test_cache_returns_consistent_curves():
    spec = make_spec(["1 + 0.5*sin(pi*x)*cos(t)"], k=0)
    c1 = trace_characteristic(spec, 1, (0.3, 1.0))
    c2 = trace_characteristic(spec, 1, (0.3, 1.0))
    np.testing.assert_array_equal(c1.taus, c2.taus)
    np.testing.assert_array_equal(c1.xis, c2.xis)


# ---------------------------------------------------------------------------
# exponential weights


def test_exp_weight_zero_diagonal():
    spec = make_spec(["1"], k=0)
    c = trace_characteristic(spec, 1, (0.5, 1.0))
    for tau in np.linspace(c.tau_min, c.tau_max, 5):
        assert exp_weight(spec, 1, c, tau) == pytest.approx(1.0, abs=1e-14)


def test_exp_weight_constant_diagonal():
    spec = make_spec(["1"], k=0, A=[["0.7"]])
    c = trace_characteristic(spec, 1, (0.5, 1.0))
    for tau in (1.0, 0.8, 0.6):
        assert exp_weight(spec, 1, c, tau) == pytest.approx(
            math.exp(0.7 * (tau - 1.0)), rel=1e-12
        )


def test_exp_weight_time_diagonal_closed_form():
    # a_11 = t from anchor t=0: E(tau) = exp(tau^2 / 2)
    spec = make_spec(["1"], k=0, A=[["t"]])
    c = trace_characteristic(spec, 1, (0.2, 0.0), direction="forward")
    for tau in (0.2, 0.5, 0.79):
        assert exp_weight(spec, 1, c, tau) == pytest.approx(
            math.exp(tau**2 / 2), rel=1e-10
        )


def test_exp_weight_against_adaptive_quadrature():
    spec = make_spec(["1 + 0.5*sin(pi*x)"], k=0, A=[["x*t"]], t_max=2.0)
    c = trace_characteristic(spec, 1, (0.9, 1.5))
    tau_q = 0.5 * (c.tau_min + 1.5)  # inside the curve's range
    oracle, err = quad(lambda s: c.xi(s) * s, 1.5, tau_q, epsabs=1e-12)
    assert math.log(exp_weight(spec, 1, c, tau_q)) == pytest.approx(
        oracle, abs=1e-8
    )


def test_exp_weight_out_of_range():
    spec = make_spec(["1"], k=0)
    c = trace_characteristic(spec, 1, (0.5, 1.0))
    with pytest.raises(ValueError):
        exp_weight(spec, 1, c, 1.7)


# ---------------------------------------------------------------------------
# intersections


def test_intersect_symmetric_lines():
    spec = make_spec(["-1", "1"], k=1)
    a = trace_characteristic(spec, 1, (1.0, 0.0), direction="forward")
    b = trace_characteristic(spec, 2, (0.0, 0.0), direction="forward")
    pt = intersect(spec, a, b)
    assert pt is not None
    assert pt == (pytest.approx(0.5, abs=1e-9), pytest.approx(0.5, abs=1e-9))


def test_intersect_disjoint_ranges():
    spec = make_spec(["-1", "1"], k=1, t_max=3.0)
    a = trace_characteristic(spec, 1, (0.5, 0.2))  # backward: tau in [0, 0.2]
    b = trace_characteristic(spec, 2, (0.5, 3.0))  # backward from t=3
    assert b.tau_min > a.tau_max  # ranges truly disjoint
    assert intersect(spec, a, b) is None


def test_intersect_asymmetric_speeds():
    spec = make_spec(["-2", "1"], k=1)
    a = trace_characteristic(spec, 1, (1.0, 0.0), direction="forward")
    b = trace_characteristic(spec, 2, (0.0, 0.0), direction="forward")
    pt = intersect(spec, a, b)
    assert pt == (pytest.approx(1 / 3, abs=1e-9), pytest.approx(1 / 3, abs=1e-9))


def test_intersect_same_component_rejected():
    spec = make_spec(["-1", "1"], k=1)
    a = trace_characteristic(spec, 2, (0.0, 0.0), direction="forward")
    with pytest.raises(ValueError):
        intersect(spec, a, a)


# ---------------------------------------------------------------------------
# csv


def test_curve_csv_dump():
    spec = make_spec(["1"], k=0)
    c = trace_characteristic(spec, 1, (0.5, 0.25))
    text = curve_to_csv(c)
    lines = text.strip().splitlines()
    assert lines[0] == "tau,xi"
    assert len(lines) == len(c) + 1
    first = lines[1].split(",")
    assert float(first[0]) == 0.25 and float(first[1]) == 0.5
