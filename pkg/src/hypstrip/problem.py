"""Problem instances on the unit strip and their validation.

A problem couples ``n`` transported components on ``(0,1) x (0,T)``:

    (d_t + lambda_i(x,t) d_x) u_i + sum_j a_ij(x,t) u_j = g_i(x,t)

with ``k`` negative speeds, ``n-k`` positive ones (strictly separated
from zero), initial data at ``t=0`` (a regular part plus optional point
singularities), and one boundary condition per component on its inflow
wall: ``x=1`` for left-movers ``i <= k``, ``x=0`` for right-movers.
Boundary laws may couple components through the trace vector

    v(t) = (u_1(0,t), ..., u_k(0,t), u_{k+1}(1,t), ..., u_n(1,t)).

Instances are read from TOML documents (see :func:`parse_problem`) and
are immutable once built; every solver and analysis entry point calls
:func:`ensure_validated` before trusting the speed ordering.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - python < 3.11
    import tomli as tomllib

from .expressions import (
    Const,
    DomainError,
    Expr,
    ExpressionError,
    Var,
    add,
    evaluate,
    mul,
    parse,
)

__all__ = [
    "Atom",
    "BoundaryLaw",
    "Classical",
    "CompatibilityVerdict",
    "GeneralNonlinear",
    "GrowthReport",
    "HyperbolicityVerdict",
    "InitialData",
    "LinearNonlocal",
    "LinearReflection",
    "ProblemError",
    "ProblemSpec",
    "check_compatibility",
    "check_growth_certificate",
    "ensure_validated",
    "load_problem",
    "parse_problem",
    "print_problem",
    "validate_hyperbolicity",
]

TOL_C = 1e-10  # compatibility residual tolerance: data are exact expressions


class ProblemError(ValueError):
    """Structural or semantic defect in a problem document.

    ``path`` points at the offending key (TOML dotted path) when known.
    """

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


def _parse_slot(text, path: str, allowed: frozenset) -> Expr:
    try:
        e = parse(text)
    except ExpressionError as err:
        raise ProblemError(str(err), path) from None
    extra = e.variables() - allowed
    if extra:
        raise ProblemError(
            f"variables {sorted(extra)} not allowed here "
            f"(allowed: {sorted(allowed)})",
            path,
        )
    return e


def _vslots(n: int) -> frozenset:
    return frozenset(f"v{j}" for j in range(1, n + 1))


# ---------------------------------------------------------------------------
# boundary laws


@dataclass(frozen=True)
class Classical:
    """Pure wall data: u_i on its inflow wall equals h_i(t)."""

    h: tuple

    kind = "classical"

    def h_exprs(self, n: int, k: int) -> tuple:
        return self.h

    def payload(self) -> dict:
        return {"h": [str(e) for e in self.h]}


@dataclass(frozen=True)
class LinearReflection:
    """Constant same-wall coupling.

    Right-movers pick up the left-movers' traces at ``x=0`` through
    ``B`` ((n-k) x k); left-movers pick up right-mover traces at ``x=1``
    through ``C`` (k x (n-k)).
    """

    B: tuple
    C: tuple

    kind = "linear_reflection"

    def h_exprs(self, n: int, k: int) -> tuple:
        out = []
        for i in range(1, n + 1):
            acc: Expr = Const(0.0)
            if i <= k:
                for j in range(k + 1, n + 1):
                    acc = add(acc, mul(Const(self.C[i - 1][j - k - 1]), Var(f"v{j}")))
            else:
                for j in range(1, k + 1):
                    acc = add(acc, mul(Const(self.B[i - k - 1][j - 1]), Var(f"v{j}")))
            out.append(acc)
        return tuple(out)

    def payload(self) -> dict:
        return {"B": [list(r) for r in self.B], "C": [list(r) for r in self.C]}


@dataclass(frozen=True)
class LinearNonlocal:
    """Time-dependent linear coupling of the full trace plus a bounded
    remainder: h_i = sum_j p_ij(t) v_j + r_i(t, v)."""

    p: tuple  # n x n exprs of t
    r: tuple  # n exprs of (t, v1..vn)
    gradient_bound: float | None = None  # user certificate for |grad_v h|

    kind = "linear_nonlocal"

    def h_exprs(self, n: int, k: int) -> tuple:
        out = []
        for i in range(n):
            acc: Expr = self.r[i]
            for j in range(n):
                acc = add(acc, mul(self.p[i][j], Var(f"v{j + 1}")))
            out.append(acc)
        return tuple(out)

    def payload(self) -> dict:
        d = {
            "p": [[str(e) for e in row] for row in self.p],
            "r": [str(e) for e in self.r],
        }
        if self.gradient_bound is not None:
            d["gradient_bound"] = self.gradient_bound
        return d


@dataclass(frozen=True)
class GeneralNonlinear:
    """Arbitrary wall laws h_i(t, v)."""

    h: tuple
    gradient_bound: float | None = None

    kind = "general_nonlinear"

    def h_exprs(self, n: int, k: int) -> tuple:
        return self.h

    def payload(self) -> dict:
        d = {"h": [str(e) for e in self.h]}
        if self.gradient_bound is not None:
            d["gradient_bound"] = self.gradient_bound
        return d


BoundaryLaw = Classical | LinearReflection | LinearNonlocal | GeneralNonlinear


# ---------------------------------------------------------------------------
# initial data


@dataclass(frozen=True)
class Atom:
    """One point singularity c * delta^(l)(x - xstar) on component i."""

    i: int  # 1-based component
    c: float
    l: int
    xstar: float


@dataclass(frozen=True)
class InitialData:
    regular: tuple  # n exprs of x
    atoms: tuple = ()

    def atoms_for(self, i: int) -> tuple:
        return tuple(a for a in self.atoms if a.i == i)


# ---------------------------------------------------------------------------
# the spec


@dataclass(frozen=True)
class ProblemSpec:
    n: int
    k: int
    lam: tuple  # n speed exprs of (x, t)
    A: tuple  # n x n coupling exprs of (x, t)
    g: tuple  # n forcing exprs of (x, t)
    boundary: BoundaryLaw
    initial: InitialData
    t_max: float
    origin: str = ""  # "wave" when produced by the wave reduction

    def h_exprs(self) -> tuple:
        """Wall law of every component as exprs over t, v1..vn."""
        return self.boundary.h_exprs(self.n, self.k)

    def inflow_wall(self, i: int) -> float:
        """Wall carrying the boundary condition of component i (1-based)."""
        return 1.0 if i <= self.k else 0.0

    def outflow_wall(self, i: int) -> float:
        """Wall where component i's trace enters v (1-based)."""
        return 0.0 if i <= self.k else 1.0

    def v_wall(self, j: int) -> float:
        """Wall at which trace slot v_j is measured (1-based)."""
        return 0.0 if j <= self.k else 1.0

    def trace_at_zero(self) -> np.ndarray:
        """v(0) evaluated from the regular initial part."""
        return np.array(
            [
                self.initial.regular[j - 1].evaluate({"x": self.v_wall(j)})
                for j in range(1, self.n + 1)
            ]
        )


# ---------------------------------------------------------------------------
# parsing


_XT = frozenset({"x", "t"})
_X = frozenset({"x"})
_T = frozenset({"t"})


def _req(table: dict, key: str, path: str):
    if key not in table:
        raise ProblemError(f"missing required key {key!r}", path)
    return table[key]


def _expr_list(raw, count: int, path: str, allowed: frozenset) -> tuple:
    if not isinstance(raw, list) or len(raw) != count:
        raise ProblemError(f"expected a list of {count} expression strings", path)
    return tuple(
        _parse_slot(s, f"{path}[{m}]", allowed) for m, s in enumerate(raw)
    )


def _matrix(raw, rows: int, cols: int, path: str):
    if not isinstance(raw, list) or len(raw) != rows:
        raise ProblemError(f"expected {rows} rows", path)
    for m, row in enumerate(raw):
        if not isinstance(row, list) or len(row) != cols:
            raise ProblemError(f"expected {cols} entries", f"{path}[{m}]")
    return raw


def _boundary_from_table(table: dict, n: int, k: int) -> BoundaryLaw:
    kind = _req(table, "kind", "boundary")
    vs = _vslots(n)
    if kind == "classical":
        return Classical(h=_expr_list(_req(table, "h", "boundary"), n, "boundary.h", _T))
    if kind == "linear_reflection":
        B = _matrix(_req(table, "B", "boundary"), n - k, k, "boundary.B")
        C = _matrix(_req(table, "C", "boundary"), k, n - k, "boundary.C")
        as_floats = lambda rows: tuple(tuple(float(e) for e in r) for r in rows)
        try:
            return LinearReflection(B=as_floats(B), C=as_floats(C))
        except (TypeError, ValueError):
            raise ProblemError("matrix entries must be numbers", "boundary") from None
    if kind == "linear_nonlocal":
        praw = _matrix(_req(table, "p", "boundary"), n, n, "boundary.p")
        p = tuple(
            tuple(_parse_slot(praw[i][j], f"boundary.p[{i}][{j}]", _T) for j in range(n))
            for i in range(n)
        )
        r = _expr_list(_req(table, "r", "boundary"), n, "boundary.r", _T | vs)
        gb = table.get("gradient_bound")
        return LinearNonlocal(p=p, r=r, gradient_bound=None if gb is None else float(gb))
    if kind == "general_nonlinear":
        h = _expr_list(_req(table, "h", "boundary"), n, "boundary.h", _T | vs)
        gb = table.get("gradient_bound")
        return GeneralNonlinear(h=h, gradient_bound=None if gb is None else float(gb))
    raise ProblemError(
        f"unknown boundary kind {kind!r} (expected classical, linear_reflection, "
        "linear_nonlocal or general_nonlinear)",
        "boundary.kind",
    )


def _initial_from_table(table: dict, n: int) -> InitialData:
    regular = _expr_list(_req(table, "regular", "initial"), n, "initial.regular", _X)
    atoms = []
    for m, raw in enumerate(table.get("atoms", [])):
        path = f"initial.atoms[{m}]"
        if not isinstance(raw, dict):
            raise ProblemError("expected a table {i, c, l, xstar}", path)
        try:
            atom = Atom(
                i=int(raw["i"]),
                c=float(raw["c"]),
                l=int(raw["l"]),
                xstar=float(raw["xstar"]),
            )
        except (KeyError, TypeError, ValueError) as err:
            raise ProblemError(f"bad atom entry: {err}", path) from None
        if not 1 <= atom.i <= n:
            raise ProblemError(f"component {atom.i} out of range 1..{n}", path)
        if atom.l < 0:
            raise ProblemError("derivative order l must be >= 0", path)
        if not 0.0 < atom.xstar < 1.0:
            raise ProblemError("atom location must lie strictly inside (0,1)", path)
        atoms.append(atom)
    # per component, order by location and reject collisions
    atoms.sort(key=lambda a: (a.i, a.xstar))
    for prev, cur in zip(atoms, atoms[1:]):
        if prev.i == cur.i and prev.xstar == cur.xstar:
            raise ProblemError(
                f"two atoms of component {cur.i} share location {cur.xstar}",
                "initial.atoms",
            )
    # endpoints of the regular part must be finite
    for m, e in enumerate(regular):
        for xe in (0.0, 1.0):
            try:
                evaluate(e, {"x": xe})
            except DomainError:
                raise ProblemError(
                    f"regular part not finite at x={xe}", f"initial.regular[{m}]"
                ) from None
    return InitialData(regular=regular, atoms=tuple(atoms))


def parse_problem(text: str) -> ProblemSpec:
    """Parse and fully validate a TOML problem document.

    Returns a validated spec (structure, dimensions, variable scopes,
    atom placement and the speed ordering all checked).  Raises
    :class:`ProblemError` with a dotted key path, or with the TOML
    parser's line/column message for lexical errors.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ProblemError(f"document is not valid TOML: {err}") from None

    if "wave" in doc:
        from .wave import wave_problem_from_table, reduce_wave

        return reduce_wave(wave_problem_from_table(doc["wave"]))

    for key in ("n", "k", "t_max", "lambda", "A", "g", "boundary", "initial"):
        _req(doc, key, "")
    try:
        n = int(doc["n"])
        k = int(doc["k"])
        t_max = float(doc["t_max"])
    except (TypeError, ValueError) as err:
        raise ProblemError(f"bad scalar field: {err}") from None
    if n < 1:
        raise ProblemError("need at least one component", "n")
    if not 0 <= k <= n:
        raise ProblemError(f"k={k} outside 0..n={n}", "k")
    if not t_max > 0:
        raise ProblemError("t_max must be positive", "t_max")

    lam = _expr_list(doc["lambda"], n, "lambda", _XT)
    araw = _matrix(doc["A"], n, n, "A")
    A = tuple(
        tuple(_parse_slot(araw[i][j], f"A[{i}][{j}]", _XT) for j in range(n))
        for i in range(n)
    )
    g = _expr_list(doc["g"], n, "g", _XT)
    if not isinstance(doc["boundary"], dict):
        raise ProblemError("expected a table", "boundary")
    boundary = _boundary_from_table(doc["boundary"], n, k)
    if not isinstance(doc["initial"], dict):
        raise ProblemError("expected a table", "initial")
    initial = _initial_from_table(doc["initial"], n)

    spec = ProblemSpec(
        n=n, k=k, lam=lam, A=A, g=g, boundary=boundary, initial=initial, t_max=t_max
    )
    verdict = validate_hyperbolicity(spec)
    if not verdict.ok:
        raise ProblemError(verdict.detail, "lambda")
    return spec


def load_problem(path) -> ProblemSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_problem(fh.read())


def print_problem(spec: ProblemSpec) -> str:
    """Serialize back to the TOML grammar (parse(print(s)) agrees with s)."""
    q = json.dumps  # TOML strings with escapes == JSON string syntax here
    lines = [
        f"n = {spec.n}",
        f"k = {spec.k}",
        f"t_max = {spec.t_max!r}",
        "lambda = [" + ", ".join(q(str(e)) for e in spec.lam) + "]",
        "A = ["
        + ", ".join("[" + ", ".join(q(str(e)) for e in row) + "]" for row in spec.A)
        + "]",
        "g = [" + ", ".join(q(str(e)) for e in spec.g) + "]",
        "",
        "[boundary]",
        f'kind = "{spec.boundary.kind}"',
    ]
    for key, value in spec.boundary.payload().items():
        if key == "gradient_bound":
            lines.append(f"gradient_bound = {value!r}")
        elif key in ("B", "C"):
            lines.append(
                f"{key} = ["
                + ", ".join("[" + ", ".join(repr(x) for x in r) + "]" for r in value)
                + "]"
            )
        elif key == "p":
            lines.append(
                "p = ["
                + ", ".join("[" + ", ".join(q(s) for s in r) + "]" for r in value)
                + "]"
            )
        else:
            lines.append(f"{key} = [" + ", ".join(q(s) for s in value) + "]")
    lines += [
        "",
        "[initial]",
        "regular = [" + ", ".join(q(str(e)) for e in spec.initial.regular) + "]",
    ]
    if spec.initial.atoms:
        entries = ", ".join(
            f"{{i = {a.i}, c = {a.c!r}, l = {a.l}, xstar = {a.xstar!r}}}"
            for a in spec.initial.atoms
        )
        lines.append(f"atoms = [{entries}]")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# hyperbolicity


@dataclass(frozen=True)
class HyperbolicityVerdict:
    ok: bool
    x: float | None = None
    t: float | None = None
    detail: str = ""


def _sample_grid(spec: ProblemSpec, samples):
    if samples is None:
        nx = 101
        nt = min(int(math.ceil(101 * spec.t_max)) + 1, 10001)
    else:
        nx, nt = samples
    return np.linspace(0.0, 1.0, nx), np.linspace(0.0, spec.t_max, nt)


def validate_hyperbolicity(spec: ProblemSpec, samples=None) -> HyperbolicityVerdict:
    """Check the strict speed ordering on a tensor sample grid.

    Ordering required at every sample: lam_1 < ... < lam_k < 0 <
    lam_{k+1} < ... < lam_n.  Default sampling density is 101 points per
    unit length in each direction.
    """
    xs, ts = _sample_grid(spec, samples)
    X, T = np.meshgrid(xs, ts, indexing="ij")
    vals = []
    for i, e in enumerate(spec.lam):
        f = e.compile(("x", "t"))
        try:
            with np.errstate(all="raise"):
                v = np.broadcast_to(np.asarray(f(X, T), dtype=float), X.shape)
        except (FloatingPointError, ZeroDivisionError, OverflowError) as err:
            return HyperbolicityVerdict(
                False, detail=f"speed {i + 1} failed to evaluate: {err}"
            )
        if not np.all(np.isfinite(v)):
            bad = np.unravel_index(int(np.argmin(np.isfinite(v))), X.shape)
            return HyperbolicityVerdict(
                False,
                x=float(X[bad]),
                t=float(T[bad]),
                detail=f"speed {i + 1} non-finite at a sample point",
            )
        vals.append(v)

    def _violation(mask, detail):
        bad = np.unravel_index(int(np.argmax(mask)), X.shape)
        return HyperbolicityVerdict(
            False, x=float(X[bad]), t=float(T[bad]), detail=detail
        )

    for i in range(spec.n - 1):
        mask = ~(vals[i] < vals[i + 1])
        if mask.any():
            return _violation(
                mask, f"ordering violated: lambda_{i + 1} >= lambda_{i + 2}"
            )
    if spec.k >= 1:
        mask = ~(vals[spec.k - 1] < 0.0)
        if mask.any():
            return _violation(mask, f"lambda_{spec.k} not negative")
    if spec.k < spec.n:
        mask = ~(vals[spec.k] > 0.0)
        if mask.any():
            return _violation(mask, f"lambda_{spec.k + 1} not positive")
    return HyperbolicityVerdict(True)


@functools.lru_cache(maxsize=512)
def _validated_ok(spec: ProblemSpec) -> HyperbolicityVerdict:
    return validate_hyperbolicity(spec)


def ensure_validated(spec: ProblemSpec) -> None:
    """Gate used by solvers and path analysis; raises on bad ordering."""
    verdict = _validated_ok(spec)
    if not verdict.ok:
        raise ProblemError(f"speed ordering check failed: {verdict.detail}", "lambda")


# ---------------------------------------------------------------------------
# compatibility at the corners


@dataclass(frozen=True)
class CompatibilityVerdict:
    ok: bool
    residuals: tuple
    tol: float

    def __str__(self):
        worst = max(self.residuals) if self.residuals else 0.0
        state = "ok" if self.ok else "violated"
        return f"compatibility {state} (max residual {worst:.3e}, tol {self.tol:.1e})"


def check_compatibility(spec: ProblemSpec, tol_c: float = TOL_C) -> CompatibilityVerdict:
    """Zero-order corner conditions between initial and boundary data.

    For each component the regular initial part, evaluated at the
    component's inflow wall, must match the wall law at t=0 applied to
    the initial trace vector.  Atoms live strictly inside (0,1) and
    never reach the corners, so the same check covers the singular case
    with the regular part in place of the continuous data.
    """
    v0 = spec.trace_at_zero()
    env = {f"v{j}": v0[j - 1] for j in range(1, spec.n + 1)}
    env["t"] = 0.0
    residuals = []
    for i in range(1, spec.n + 1):
        wall = spec.inflow_wall(i)
        lhs = spec.initial.regular[i - 1].evaluate({"x": wall})
        rhs = spec.h_exprs()[i - 1].evaluate(env)
        residuals.append(abs(lhs - rhs))
    return CompatibilityVerdict(
        ok=all(r <= tol_c for r in residuals),
        residuals=tuple(residuals),
        tol=tol_c,
    )


# ---------------------------------------------------------------------------
# growth certificate for the wall laws


@dataclass(frozen=True)
class GrowthReport:
    max_gradient: float
    half_box_gradient: float
    growth_factor: float
    warn_unbounded: bool
    declared_bound: float | None
    consistent: bool

    def __str__(self):
        msg = f"sampled sup |grad_v h| = {self.max_gradient:.6g}"
        if self.declared_bound is not None:
            msg += f"; declared bound {self.declared_bound:g} " + (
                "consistent" if self.consistent else "EXCEEDED"
            )
        if self.warn_unbounded:
            msg += "; warning: gradient grows with the trace box (unbounded growth?)"
        return msg


def check_growth_certificate(
    spec: ProblemSpec,
    t_range: tuple | None = None,
    v_bound: float = 10.0,
    samples: int = 200,
    seed: int = 0,
) -> GrowthReport:
    """Sample the trace-gradient of the wall laws over a compact box.

    Advisory only: reports the sampled sup of the row-sum norm of
    ``d h / d v`` over ``t in t_range, |v_j| <= v_bound``, compares it to
    the user-declared bound when one is present, and warns when the
    gradient keeps growing as the box doubles (a hint that no global
    bound exists).  Only wall laws that actually read the trace are
    eligible.
    """
    if isinstance(spec.boundary, (Classical, LinearReflection)):
        raise ProblemError(
            "growth certificate applies to trace-dependent wall laws only",
            "boundary",
        )
    t0, t1 = t_range if t_range is not None else (0.0, spec.t_max)
    hs = spec.h_exprs()
    grads = [
        [h.diff(f"v{j}") for j in range(1, spec.n + 1)] for h in hs
    ]
    rng = np.random.default_rng(seed)
    ts = rng.uniform(t0, t1, samples)
    vs = rng.uniform(-1.0, 1.0, (samples, spec.n))
    # include the corners of the box, where monomial gradients peak
    corners = np.array(np.meshgrid(*([[-1.0, 1.0]] * spec.n))).T.reshape(-1, spec.n)
    vs = np.vstack([vs, corners])
    ts = np.concatenate([ts, np.full(len(corners), t1)])

    def box_max(scale: float) -> float:
        worst = 0.0
        for t, v in zip(ts, vs):
            env = {f"v{j + 1}": scale * v_bound * v[j] for j in range(spec.n)}
            env["t"] = t
            for row in grads:
                s = sum(abs(d.evaluate(env)) for d in row)
                worst = max(worst, float(s))
        return worst

    half = box_max(0.5)
    full = box_max(1.0)
    factor = full / half if half > 0 else 1.0
    declared = getattr(spec.boundary, "gradient_bound", None)
    return GrowthReport(
        max_gradient=full,
        half_box_gradient=half,
        growth_factor=factor,
        warn_unbounded=factor >= 1.5,
        declared_bound=declared,
        consistent=declared is None or full <= declared,
    )
