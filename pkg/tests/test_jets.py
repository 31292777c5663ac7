"""Taylor-jet arithmetic, composition, reversion, flow jets, delta actions."""

import math

import numpy as np
import pytest
import sympy

from hypstrip.expressions import parse
from hypstrip.jets import Jet, compose, delta_action, ode_taylor, revert

ORDER = 6


def sympy_jet(expr_text: str, x0: float, order: int = ORDER) -> np.ndarray:
    """Oracle: Taylor coefficients via sympy differentiation."""
    x = sympy.Symbol("x")
    e = sympy.sympify(expr_text.replace("abs", "Abs"))
    out = []
    for m in range(order + 1):
        out.append(float(sympy.diff(e, x, m).subs(x, x0)) / math.factorial(m))
    return np.array(out)


@pytest.mark.parametrize(
    "text,x0",
    [
        ("exp(x)", 0.0),
        ("exp(x)*sin(x)", 0.7),
        ("sin(x)/(2 + cos(x))", -0.3),
        ("log(1 + x**2)", 0.5),
        ("tanh(2*x)", 0.25),
        ("(1 + x**2)**0.5", 1.2),
        ("x**3 - 2*x + 1", -1.0),
        ("1/(1 - x)", 0.0),
        ("exp(-x**2)*cos(3*x)", 0.4),
    ],
)
def test_expression_trees_propagate_jets(text, x0):
    jet = parse(text).evaluate({"x": Jet.variable(x0, ORDER)})
    np.testing.assert_allclose(
        jet.c, sympy_jet(text, x0), rtol=1e-10, atol=1e-12
    )


def test_compiled_expressions_propagate_jets():
    f = parse("exp(x)*sin(x)").compile(("x",))
    jet = f(Jet.variable(0.7, ORDER))
    np.testing.assert_allclose(
        jet.c, sympy_jet("exp(x)*sin(x)", 0.7), rtol=1e-10
    )


def test_known_geometric_series():
    # 1/(1-x) at 0: all coefficients 1
    jet = 1.0 / (1.0 - Jet.variable(0.0, 8))
    np.testing.assert_allclose(jet.c, np.ones(9), rtol=1e-14)


def test_division_inverts_multiplication():
    rng = np.random.default_rng(7)
    for _ in range(25):
        a = Jet(rng.normal(size=ORDER + 1))
        b = Jet(rng.normal(size=ORDER + 1))
        if abs(b.c[0]) < 0.1:
            b = b + 1.0
        np.testing.assert_allclose((a / b * b).c, a.c, rtol=1e-9, atol=1e-9)


def test_integer_powers_allow_vanishing_base():
    x = Jet.variable(0.0, 5)
    np.testing.assert_allclose((x ** 3).c, [0, 0, 0, 1, 0, 0], atol=1e-15)


def test_derivative_readout_scales_by_factorial():
    jet = parse("sin(x)").evaluate({"x": Jet.variable(0.0, 5)})
    assert jet.derivative(3) == pytest.approx(-1.0, abs=1e-14)


def test_diff_and_integrate_are_inverse():
    rng = np.random.default_rng(3)
    a = Jet(rng.normal(size=7))
    back = a.diff().integrate(a.value)
    np.testing.assert_allclose(back.c, a.c, rtol=1e-14)


# ---------------------------------------------------------------------------
# composition and reversion


def test_compose_with_identity_is_identity():
    rng = np.random.default_rng(11)
    f = Jet(rng.normal(size=ORDER + 1))
    ident = Jet.variable(f.value * 0.0, ORDER)  # y = s
    np.testing.assert_allclose(compose(f, ident).c, f.c, rtol=1e-14)


def test_compose_matches_sympy():
    # f(u) = exp(u) at u0=sin(0.5); u(s) = sin(s+0.5) at s=0
    s = sympy.Symbol("s")
    target = sympy.exp(sympy.sin(s + sympy.Rational(1, 2)))
    expect = [
        float(sympy.diff(target, s, m).subs(s, 0)) / math.factorial(m)
        for m in range(ORDER + 1)
    ]
    u = parse("sin(x + 0.5)").evaluate({"x": Jet.variable(0.0, ORDER)})
    f = parse("exp(x)").evaluate({"x": Jet.variable(u.value, ORDER)})
    np.testing.assert_allclose(compose(f, u).c, expect, rtol=1e-10)


def test_reversion_inverts_the_series():
    g = Jet([0.0, 2.0, 1.0, -0.5, 0.3, 0.0, 0.0])  # y = 2s + s^2 - ...
    s_of_y = revert(g)
    # g(s(y)) must be the identity in y
    np.testing.assert_allclose(
        compose(g, s_of_y).c, Jet.variable(0.0, g.order).c, atol=1e-12
    )


def test_reversion_known_coefficients():
    # y = 2s + s^2  =>  s = y/2 - y^2/8 + y^3/16 - ...
    g = Jet([0.0, 2.0, 1.0, 0.0, 0.0])
    s_of_y = revert(g)
    np.testing.assert_allclose(
        s_of_y.c[:4], [0.0, 0.5, -0.125, 0.0625], atol=1e-14
    )


def test_reversion_requires_simple_root():
    with pytest.raises(ValueError):
        revert(Jet([0.0, 0.0, 1.0]))
    with pytest.raises(ValueError):
        revert(Jet([1.0, 2.0, 1.0]))


# ---------------------------------------------------------------------------
# ODE flow jets


def test_flow_jet_exponential():
    jet = ode_taylor(lambda x, t: x, t0=0.0, x0=1.0, order=7)
    np.testing.assert_allclose(
        jet.c, [1 / math.factorial(m) for m in range(8)], rtol=1e-12
    )


def test_flow_jet_riccati():
    # x' = x^2, x(0)=1  =>  x = 1/(1-t), all coefficients 1
    jet = ode_taylor(lambda x, t: x * x, t0=0.0, x0=1.0, order=7)
    np.testing.assert_allclose(jet.c, np.ones(8), rtol=1e-12)


def test_flow_jet_time_dependent():
    # x' = 2t, x(1)=3  =>  x = 2 + t^2 = 3 + 2(t-1) + (t-1)^2
    jet = ode_taylor(lambda x, t: 2.0 * t, t0=1.0, x0=3.0, order=4)
    np.testing.assert_allclose(jet.c, [3.0, 2.0, 1.0, 0.0, 0.0], atol=1e-14)


def test_flow_jet_with_compiled_coefficient():
    lam = parse("1 + 0.5*sin(pi*x)*cos(t)").compile(("x", "t"))
    jet = ode_taylor(lam, t0=0.3, x0=0.4, order=5)
    # first coefficient must be the value, second the slope at (x0, t0)
    assert jet.value == 0.4
    assert jet.c[1] == pytest.approx(lam(0.4, 0.3), rel=1e-14)
    # third: (1/2) x'' = (1/2)(lam_x x' + lam_t)
    e = parse("1 + 0.5*sin(pi*x)*cos(t)")
    lx = e.diff("x").evaluate({"x": 0.4, "t": 0.3})
    lt = e.diff("t").evaluate({"x": 0.4, "t": 0.3})
    assert jet.c[2] == pytest.approx(0.5 * (lx * lam(0.4, 0.3) + lt), rel=1e-12)


# ---------------------------------------------------------------------------
# delta actions


def test_delta_action_linear_argument():
    # ∫ δ(c(τ-τ*)) φ(τ) dτ = φ(τ*)/|c|
    phi = Jet([5.0, 1.0, 2.0, 0.0])
    g = Jet([0.0, -2.0, 0.0, 0.0])
    assert delta_action(0, g, phi) == pytest.approx(2.5, abs=1e-14)


def test_delta_action_first_order_linear():
    # ∫ δ'(-τ) φ(τ) dτ = +φ'(0)
    phi = Jet([5.0, 3.0, 2.0, 0.0])
    g = Jet([0.0, -1.0, 0.0, 0.0])
    assert delta_action(1, g, phi) == pytest.approx(3.0, abs=1e-13)


def test_delta_action_curved_argument_hand_computed():
    # g(τ) = τ^2 - 1 near τ*=1, φ(τ) = 3 + τ^2
    # ψ(y) = (4+y)/(2 sqrt(1+y)); action q=1 is -ψ'(0) = 1/2, q=0 is 2
    g = Jet([0.0, 2.0, 1.0, 0.0])
    phi = Jet([4.0, 2.0, 1.0, 0.0])
    assert delta_action(0, g, phi) == pytest.approx(2.0, abs=1e-13)
    assert delta_action(1, g, phi) == pytest.approx(0.5, abs=1e-13)


def test_delta_action_against_mollified_integral():
    # smooth bump approximating δ'' applied to φ along curved g
    eps = 1e-3
    tau_star = 0.6
    g_expr = parse("sin(x - 0.6) + 0.3*(x - 0.6)**2")
    phi_expr = parse("exp(x)*cos(x)")
    taus = np.linspace(tau_star - 0.2, tau_star + 0.2, 400001)
    gv = g_expr.evaluate({"x": taus})
    pv = phi_expr.evaluate({"x": taus})
    # Gaussian nascent delta, differentiated twice in its argument
    y = gv / eps
    kernel = (y**2 - 1.0) / eps**3 * np.exp(-(y**2) / 2) / math.sqrt(2 * math.pi)
    numeric = np.trapezoid(kernel * pv, taus)
    q = 2
    g_jet = g_expr.evaluate({"x": Jet.variable(tau_star, q + 2)})
    phi_jet = phi_expr.evaluate({"x": Jet.variable(tau_star, q + 2)})
    exact = delta_action(q, g_jet, phi_jet)
    assert numeric == pytest.approx(exact, rel=5e-3)
