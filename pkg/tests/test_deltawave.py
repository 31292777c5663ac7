"""Singular initial data: mollifier, atom transport, regular remainder,
and the mollified convergence diagnostics.

Expected values come from independent routes written before the module:
sympy quadrature for the mollifier, a from-scratch distributional
expansion for the amplitude system, closed-form crossing calculus for
the jump test, and mollified full solves for the re-emission amplitude.
"""

import math

import numpy as np
import pytest
import sympy

from hypstrip.deltawave import (
    DeltaWaveError,
    Mollifier,
    SingularAtom,
    amplitude_matrix,
    compute_J_sets,
    delta_wave,
    mollified_initial,
    mollified_solutions,
    solve_regular,
    solve_singular,
)
from hypstrip.problem import ProblemError, parse_problem
from hypstrip.solver import callables_from_spec, picard_solve, solve_kernel


DAMPED_ATOM = """
n = 1
k = 0
t_max = 1.0
lambda = ["1"]
A = [["0.5"]]
g = ["0"]

[boundary]
kind = "classical"
h = ["0"]

[initial]
regular = ["0"]
atoms = [{i = 1, c = 1.0, l = 0, xstar = 0.3}]
"""

REFLECT_ATOM = """
n = 2
k = 1
t_max = 1.0
lambda = ["-1", "1"]
A = [["0", "0"], ["0", "0"]]
g = ["0", "0"]

[boundary]
kind = "linear_reflection"
B = [[0.8]]
C = [[0.0]]

[initial]
regular = ["0", "0"]
atoms = [{i = 1, c = 1.0, l = 0, xstar = 0.4}]
"""

PERIODIC_ATOM = """
n = 1
k = 0
t_max = 2.5
lambda = ["1"]
A = [["0"]]
g = ["0"]

[boundary]
kind = "linear_nonlocal"
p = [["1"]]
r = ["0"]

[initial]
regular = ["0"]
atoms = [{i = 1, c = 1.0, l = 0, xstar = 0.3}]
"""

CROSSING = """
n = 2
k = 1
t_max = 1.0
lambda = ["-1", "1"]
A = [["0", "1"], ["0", "0"]]
g = ["0", "0"]

[boundary]
kind = "classical"
h = ["0", "0"]

[initial]
regular = ["0", "0"]
atoms = [{i = 2, c = 1.0, l = 0, xstar = 0.3}]
"""

MANUFACTURED = """
n = 2
k = 1
t_max = 1.0
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

TANH_FEEDBACK = """
n = 1
k = 0
t_max = 1.0
lambda = ["1"]
A = [["0.5"]]
g = ["0"]

[boundary]
kind = "linear_nonlocal"
p = [["0"]]
r = ["0.5*tanh(v1)"]

[initial]
regular = ["0"]
atoms = [{i = 1, c = 1.0, l = 0, xstar = 0.3}]
"""


# ---------------------------------------------------------------------------
# mollifier


def test_mollifier_matches_sympy_profile():
    s = sympy.symbols("s")
    prof = sympy.exp(-1 / (1 - s**2))
    mass = float(sympy.Integral(prof, (s, -1, 1)).evalf(20))
    moll = Mollifier()
    xs = np.linspace(-0.95, 0.95, 41)
    want = np.array([float(prof.subs(s, v)) for v in xs]) / mass
    assert np.max(np.abs(moll(xs) - want)) < 1e-10
    # second derivative against the symbolic route
    d2 = sympy.lambdify(s, sympy.diff(prof, s, 2), "numpy")
    got = moll.profile(xs, order=2)
    assert np.max(np.abs(got - d2(xs) / mass)) < 1e-8


def test_mollifier_mass_and_support():
    moll = Mollifier()
    assert abs(moll.moment(0) - 1.0) < 1e-12
    assert moll(np.array([-1.0, 1.0, -2.0, 3.0])).tolist() == [0, 0, 0, 0]
    f = moll.scaled(0.25)
    xs = np.linspace(-1, 1, 401)
    assert np.all(f(xs[np.abs(xs) >= 0.25]) == 0.0)
    # unit mass at every scale
    vals = f(xs)
    assert abs(np.trapezoid(vals, xs) - 1.0) < 1e-6


def test_mollifier_moment_identities():
    # int phi_eps^(l)(x) x^p / p! dx = delta_pl (-1)^l for p <= l <= 2
    moll = Mollifier()
    for l in range(3):
        for p in range(l + 1):
            want = (-1.0) ** l if p == l else 0.0
            assert abs(moll.moment(p, order=l) - want) < 1e-10, (l, p)


def test_mollified_initial_places_bumps():
    spec = parse_problem(DAMPED_ATOM)
    moll = Mollifier()
    xs = np.linspace(0, 1, 513)
    rows = mollified_initial(spec, moll, 0.05, xs)
    assert rows.shape == (1, 513)
    assert abs(np.trapezoid(rows[0], xs) - 1.0) < 1e-4
    assert np.all(rows[0][np.abs(xs - 0.3) > 0.06] == 0.0)


# ---------------------------------------------------------------------------
# amplitude system: independent distributional expansion


def _expansion_matrix(lam_d, d_d, l):
    """Collect delta-orders of (d_t + lam d_x + d) sum a_m delta^(m).

    ``lam_d[p]``/``d_d[p]`` are the x-derivatives at the carrier point.
    Returns K with a' = K a.  Written from the product rule
    f(x) delta^(m)(x-c) = sum_p (-1)^p C(m,p) f^(p)(c) delta^(m-p),
    with the transport term lam(c) delta^(m+1) cancelled by -X'.
    """
    coeff = np.zeros((l + 1, l + 1))
    for m in range(l + 1):
        for p in range(1, m + 2):
            coeff[m + 1 - p][m] += (-1.0) ** p * math.comb(m + 1, p) * lam_d[p]
        for p in range(0, m + 1):
            coeff[m - p][m] += (-1.0) ** p * math.comb(m, p) * d_d[p]
    return -coeff


def test_amplitude_matrix_matches_expansion():
    x0, t0 = 0.4, 0.3
    lam_d = [0.7, 0.3, -0.4, 0.9]
    d_d = [0.2, -0.5, 0.6, 0.0]
    lam = " + ".join(
        f"({c / math.factorial(p)})*(x - {x0})**{p}" for p, c in enumerate(lam_d)
    )
    d = " + ".join(
        f"({c / math.factorial(p)})*(x - {x0})**{p}" for p, c in enumerate(d_d)
    )
    for l in range(3):
        got = amplitude_matrix(lam, d, x0, t0, l)
        want = _expansion_matrix(lam_d, d_d, l)
        assert np.max(np.abs(got - want)) < 1e-9, l


def test_constant_coefficient_amplitude_decay():
    spec = parse_problem(DAMPED_ATOM)
    atoms = solve_singular(spec)
    assert len(atoms) == 1
    atom = atoms[0]
    assert atom.component == 1 and atom.order == 0 and atom.generation == 0
    assert abs(atom.taus[-1] - 0.7) < 1e-9
    for t in (0.0, 0.2, 0.45, 0.7):
        assert abs(atom.position(t) - (0.3 + t)) < 1e-9
        assert abs(atom.amplitude(t) - math.exp(-0.5 * t)) < 1e-6


def test_atom_exits_without_reemission():
    spec = parse_problem(DAMPED_ATOM)
    atoms = solve_singular(spec)
    assert len(atoms) == 1  # classical wall swallows it


def test_reflection_emits_scaled_atom():
    spec = parse_problem(REFLECT_ATOM)
    atoms = solve_singular(spec)
    assert len(atoms) == 2
    first, second = atoms
    assert (first.component, second.component) == (1, 2)
    assert second.generation == 1 and second.parent == 0
    assert abs(second.taus[0] - 0.4) < 1e-9
    # b0 = p * a0 * |lam_2| / |lam_1|
    assert abs(second.amplitude(0.5) - 0.8) < 1e-9
    assert abs(second.position(0.9) - 0.5) < 1e-9


def test_reflection_amplitude_against_mollified_solve():
    # independent route: solve the full linear system with mollified
    # data and measure the re-emitted mass, extrapolating eps -> 0
    spec = parse_problem(REFLECT_ATOM)
    moll = Mollifier()
    masses = []
    eps_list = [0.08, 0.04, 0.02]
    xs = np.linspace(0, 1, 257)
    ts = np.linspace(0, 1, 257)
    for eps in eps_list:
        cb = callables_from_spec(spec)
        bottom = mollified_initial(spec, moll, eps, xs)
        sol, _ = solve_kernel(cb, xs, ts, bottom, tol=1e-10)
        u2 = sol.values[1, -1, :]  # t = 1.0, bump sits near x = 0.6
        masses.append(float(np.trapezoid(u2, xs)))
    fit = np.polyfit(eps_list, masses, 1)
    atoms = solve_singular(spec)
    assert abs(fit[1] - atoms[1].amplitude(1.0)) < 5e-3


def test_singular_rejects_general_nonlinear():
    text = DAMPED_ATOM.replace(
        'kind = "classical"\nh = ["0"]',
        'kind = "general_nonlinear"\nh = ["0.5*tanh(v1)"]',
    )
    spec = parse_problem(text)
    with pytest.raises((DeltaWaveError, ProblemError)):
        solve_singular(spec)


def test_generation_overflow_raises():
    spec = parse_problem(PERIODIC_ATOM)
    with pytest.raises(DeltaWaveError):
        solve_singular(spec, depth_max=2)


def test_periodic_atom_bounces():
    spec = parse_problem(PERIODIC_ATOM)
    atoms = solve_singular(spec)
    assert len(atoms) == 3
    assert [a.generation for a in atoms] == [0, 1, 2]
    assert abs(atoms[1].taus[0] - 0.7) < 1e-9
    assert abs(atoms[2].taus[0] - 1.7) < 1e-9
    for a in atoms:
        assert abs(a.amplitude(a.taus[0]) - 1.0) < 1e-9  # p = 1, |lam| = 1


# ---------------------------------------------------------------------------
# J sets


def test_j_sets_single_line():
    spec = parse_problem(DAMPED_ATOM)
    js = compute_J_sets(spec)
    assert len(js.legs_star) == 1 and len(js.legs) == 1
    assert np.array_equal(js.j_star, js.j)
    r = int(round(0.5 / js.dt))
    row = js.j_star[r]
    cells = np.where(row)[0]
    assert cells.size <= 3
    assert np.all(np.abs(js.centers[cells] - 0.8) < 2.5 * js.dx)
    # nothing marked away from the line
    assert not row[: int(0.7 / js.dx) - 2].any()


def test_j_sets_sawtooth_periodic():
    spec = parse_problem(PERIODIC_ATOM)
    js = compute_J_sets(spec)
    assert len(js.legs_star) == 3
    for t_probe, x_want in ((0.5, 0.8), (1.0, 0.3), (2.0, 0.3)):
        r = int(round(t_probe / js.dt))
        cells = np.where(js.j_star[r])[0]
        assert cells.size and np.min(np.abs(js.centers[cells] - x_want)) < 2.5 * js.dx


def test_j_eps_tube_width():
    spec = parse_problem(DAMPED_ATOM)
    js = compute_J_sets(spec, eps_list=(0.1,))
    tube = js.j_eps[0.1]
    r = int(round(0.2 / js.dt))
    cells = np.where(tube[r])[0]
    lo, hi = js.centers[cells[0]], js.centers[cells[-1]]
    assert abs((hi - lo) - 0.2) < 6 * js.dx
    assert abs(0.5 * (hi + lo) - 0.5) < 3 * js.dx
    # the tube contains the skeleton
    assert not (js.j_star & ~tube).any()


def test_j_sets_depth_overflow_propagates():
    spec = parse_problem(PERIODIC_ATOM)
    with pytest.raises(DeltaWaveError):
        compute_J_sets(spec, depth_max=2)


# ---------------------------------------------------------------------------
# regular remainder


def test_regular_no_atoms_matches_solver():
    spec = parse_problem(MANUFACTURED)
    w = solve_regular(spec, [], grid=(96, 96), tol=1e-8)
    ref, _ = picard_solve(spec, grid=(96, 96), tol=1e-8)
    assert np.max(np.abs(w.values - ref.values)) < 2e-8


def test_regular_crossing_jump():
    # order-0 atom on component 2 forces a jump of E*f12*a0/|l1-l2| = 1/2
    # in w_1 across the carrier; derived by the crossing-point calculus
    spec = parse_problem(CROSSING)
    atoms = solve_singular(spec)
    w = solve_regular(spec, atoms, grid=(256, 256), tol=1e-10)
    t = 0.4
    x_car = 0.7  # carrier 0.3 + t
    behind = w.interpolate(1, x_car - 6 / 256, t)
    ahead = w.interpolate(1, x_car + 6 / 256, t)
    assert abs((behind - ahead) + 0.5) < 0.05
    # far from the carrier the solution is unperturbed
    assert abs(w.interpolate(2, 0.1, 0.1)) < 1e-8
    assert any("piecewise" in msg for msg in w.warnings)


def test_regular_crossing_against_mollified():
    # same value read from the mollified full solve off the tube
    spec = parse_problem(CROSSING)
    atoms = solve_singular(spec)
    w = solve_regular(spec, atoms, grid=(256, 256), tol=1e-10)
    sols = mollified_solutions(spec, 0.02, grid=(256, 256), tol=1e-10)
    diff = sols["u"].values - sols["z"].values
    ix = int(0.45 * 256)
    it = int(0.4 * 256)
    assert abs(diff[0, it, ix] - w.values[0, it, ix]) < 0.03


def test_regular_without_coupling_is_continuous():
    text = CROSSING.replace('A = [["0", "1"], ["0", "0"]]', 'A = [["0", "0"], ["0", "0"]]')
    spec = parse_problem(text)
    atoms = solve_singular(spec)
    w = solve_regular(spec, atoms, grid=(128, 128))
    assert np.max(np.abs(w.values)) < 1e-9  # zero data, no forcing


# ---------------------------------------------------------------------------
# pairings


def test_pairing_closed_form():
    text = DAMPED_ATOM.replace('A = [["0.5"]]', 'A = [["0"]]').replace(
        "atoms = [{i = 1, c = 1.0, l = 0, xstar = 0.3}]",
        "atoms = [{i = 1, c = 2.0, l = 1, xstar = 0.3}]",
    )
    spec = parse_problem(text)
    atoms = solve_singular(spec)
    assert len(atoms) == 1 and atoms[0].order == 1
    # <a1 d'(x-X(t)), x*t> = -a1 * int_0^0.7 t dt = -2 * 0.245
    got = atoms[0].pairing("x*t")
    assert abs(got - (-0.49)) < 1e-6


def test_pairing_mollified_cross_check():
    # test function must vanish on the walls: a derivative-order bump
    # deposits an O(1) boundary term while it exits otherwise
    text = DAMPED_ATOM.replace('A = [["0.5"]]', 'A = [["0"]]').replace(
        "atoms = [{i = 1, c = 1.0, l = 0, xstar = 0.3}]",
        "atoms = [{i = 1, c = 1.0, l = 1, xstar = 0.3}]",
    )
    spec = parse_problem(text)
    atoms = solve_singular(spec)
    # <d'(x - 0.3 - t), t sin(pi x)> = -pi int_0^0.7 t cos(pi(0.3+t)) dt
    exact = atoms[0].pairing("t*sin(pi*x)")
    assert abs(exact - 1.5877852522924734 / math.pi) < 1e-6
    moll = Mollifier()
    xs = np.linspace(0, 1, 2049)
    vals = []
    for eps in (0.05, 0.025):
        total = 0.0
        taus = np.linspace(0, 1, 513)
        for t in taus:
            zrow = atoms[0].mollified(moll, eps)(xs, t)
            total += np.trapezoid(zrow * np.sin(np.pi * xs) * t, xs)
        vals.append(total * (taus[1] - taus[0]))
    assert abs(vals[-1] - exact) < 2e-4
    assert abs(vals[-1] - exact) <= 0.5 * abs(vals[0] - exact) + 1e-12


# ---------------------------------------------------------------------------
# delta-wave diagnostics


def test_delta_wave_exact_split_is_machine_zero():
    text = DAMPED_ATOM.replace('A = [["0.5"]]', 'A = [["0"]]')
    spec = parse_problem(text)
    out = delta_wave(spec, grid=(128, 128), eps_list=(0.1, 0.05, 0.025))
    assert [v < 1e-10 for _, v in out.l1] == [True, True, True]
    assert not out.flags


def test_delta_wave_l1_slope():
    spec = parse_problem(TANH_FEEDBACK)
    out = delta_wave(spec, grid=(256, 256), eps_list=(0.1, 0.05, 0.025))
    eps = np.array([e for e, _ in out.l1])
    vals = np.array([v for _, v in out.l1])
    assert np.all(np.diff(vals) < 0)
    slope = np.polyfit(np.log(eps), np.log(vals), 1)[0]
    assert slope >= 0.7
    assert not out.flags


def test_delta_wave_pairing_diagnostic():
    spec = parse_problem(TANH_FEEDBACK)
    out = delta_wave(
        spec, grid=(256, 256), eps_list=(0.1, 0.05, 0.025), test_functions=("x*t",)
    )
    # grid quadrature of the bump limits the attainable accuracy here
    vals = [abs(v) for _, v in out.pairings["x*t"]]
    assert vals[-1] < 0.08


def test_z_eps_supported_in_tube():
    spec = parse_problem(PERIODIC_ATOM)
    eps = 0.05
    sols = mollified_solutions(spec, eps, grid=(256, 640), tol=1e-9)
    z = sols["z"]
    # far from the sawtooth tube z^eps stays at solver noise
    for t_probe, x_probe in ((0.5, 0.2), (1.0, 0.8), (2.0, 0.75)):
        assert abs(z.interpolate(1, x_probe, t_probe)) < 1e-6


def test_delta_wave_guards():
    spec = parse_problem(DAMPED_ATOM)
    with pytest.raises(DeltaWaveError):
        delta_wave(spec, grid=(128, 128), eps_list=(0.1, 0.05))  # too few
    with pytest.raises(DeltaWaveError):
        delta_wave(spec, grid=(128, 128), eps_list=(0.05, 0.1, 0.2))  # not decreasing
    with pytest.raises(DeltaWaveError):
        delta_wave(spec, grid=(32, 32), eps_list=(0.5, 0.25, 0.03))  # under-resolved


def test_atom_mollified_closure_shape():
    spec = parse_problem(DAMPED_ATOM)
    atoms = solve_singular(spec)
    moll = Mollifier()
    f = atoms[0].mollified(moll, 0.1)
    xs = np.linspace(0, 1, 101)
    row = f(xs, 0.2)
    assert row.shape == xs.shape
    assert abs(xs[int(np.argmax(row))] - 0.5) < 0.02
    # amplitude times the scaled bump peak
    assert abs(np.max(row) - math.exp(-0.1) * moll(np.array([0.0]))[0] / 0.1) < 5e-3
