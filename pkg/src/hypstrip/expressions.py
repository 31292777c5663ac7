"""Small closed expression language for problem coefficients.

Coefficients, boundary laws and test functions are given as strings over
the variables ``x``, ``t`` and boundary-trace slots ``v1 .. vn``, the
binary operations ``+ - * / **`` (``^`` is accepted as a synonym for
``**``), and the function set ``sin cos exp log abs tanh sign``.  The
module parses such strings into immutable trees that can be

* evaluated on floats, numpy arrays, or any object overloading the
  arithmetic operators (truncated Taylor jets use this),
* differentiated symbolically with respect to any variable, and
* compiled to fast positional callables for inner loops.

Printing produces a string that parses back to an equivalent tree.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Expr",
    "Const",
    "Var",
    "Neg",
    "Add",
    "Sub",
    "Mul",
    "Div",
    "Pow",
    "Call",
    "ExpressionError",
    "ExpressionSyntaxError",
    "DomainError",
    "parse",
    "evaluate",
    "FUNCTIONS",
]


class ExpressionError(ValueError):
    """Malformed or unusable coefficient expression."""


class ExpressionSyntaxError(ExpressionError):
    """Unparsable expression text; carries the offending source."""


class DomainError(ExpressionError):
    """Evaluation left the expression's numeric domain (log of a
    non-positive value, division by zero, overflow)."""


def _fallback(name):
    fn = getattr(np, name)

    def apply(value):
        # objects that implement the function themselves (jets) win
        method = getattr(value, name, None)
        if method is not None and callable(method):
            return method()
        return fn(value)

    apply.__name__ = "_apply_" + name
    return apply


#: function name -> dispatcher usable on floats, arrays and jets
FUNCTIONS = {
    name: _fallback(name)
    for name in ("sin", "cos", "exp", "log", "abs", "tanh", "sign")
}

_CONSTANTS = {"pi": math.pi}


@dataclass(frozen=True)
class Expr:
    """Base node. Subclasses are frozen; trees are shared freely."""

    def __call__(self, **env):
        return self.evaluate(env)

    def evaluate(self, env):
        raise NotImplementedError

    def diff(self, var: str) -> "Expr":
        raise NotImplementedError

    def variables(self) -> frozenset:
        raise NotImplementedError

    # precedence used for printing with minimal parentheses
    _prec = 100

    def _src(self) -> str:
        raise NotImplementedError

    def __str__(self) -> str:
        return self._src()

    def compile(self, names: tuple):
        """Build a fast positional callable ``f(*values)``.

        Args:
            names: variable order of the callable's positional arguments.
                Every free variable of the tree must appear in ``names``.

        Returns:
            A plain Python function evaluating the tree; it accepts
            floats, numpy arrays or jet objects.
        """
        missing = self.variables() - set(names)
        if missing:
            raise ExpressionError(
                f"expression uses {sorted(missing)} not among {list(names)}"
            )
        src = "lambda {}: {}".format(", ".join(names), self._src())
        ns = dict(FUNCTIONS)
        ns["pi"] = math.pi
        return eval(src, ns)  # noqa: S307 - source built from a closed grammar


@dataclass(frozen=True)
class Const(Expr):
    value: float

    def evaluate(self, env):
        return self.value

    def diff(self, var):
        return Const(0.0)

    def variables(self):
        return frozenset()

    def _src(self):
        # repr round-trips doubles exactly; keep pi readable
        if self.value == math.pi:
            return "pi"
        if self.value < 0:
            return "(" + repr(self.value) + ")"
        return repr(self.value)

    def compile(self, names):
        value = self.value
        return lambda *args: value


@dataclass(frozen=True)
class Var(Expr):
    name: str

    def evaluate(self, env):
        try:
            return env[self.name]
        except KeyError:
            raise ExpressionError(f"unbound variable {self.name!r}") from None

    def diff(self, var):
        return Const(1.0 if var == self.name else 0.0)

    def variables(self):
        return frozenset((self.name,))

    def _src(self):
        return self.name


@dataclass(frozen=True)
class Neg(Expr):
    a: Expr
    _prec = 25

    def evaluate(self, env):
        return -self.a.evaluate(env)

    def diff(self, var):
        return neg(self.a.diff(var))

    def variables(self):
        return self.a.variables()

    def _src(self):
        return "-" + _wrap(self.a, self._prec)


def _wrap(node: Expr, minimum: int, strict: bool = False) -> str:
    p = node._prec
    if p < minimum or (strict and p == minimum):
        return "(" + node._src() + ")"
    return node._src()


@dataclass(frozen=True)
class Add(Expr):
    a: Expr
    b: Expr
    _prec = 10

    def evaluate(self, env):
        return self.a.evaluate(env) + self.b.evaluate(env)

    def diff(self, var):
        return add(self.a.diff(var), self.b.diff(var))

    def variables(self):
        return self.a.variables() | self.b.variables()

    def _src(self):
        return _wrap(self.a, 10) + " + " + _wrap(self.b, 10, strict=True)


@dataclass(frozen=True)
class Sub(Expr):
    a: Expr
    b: Expr
    _prec = 10

    def evaluate(self, env):
        return self.a.evaluate(env) - self.b.evaluate(env)

    def diff(self, var):
        return sub(self.a.diff(var), self.b.diff(var))

    def variables(self):
        return self.a.variables() | self.b.variables()

    def _src(self):
        return _wrap(self.a, 10) + " - " + _wrap(self.b, 10, strict=True)


@dataclass(frozen=True)
class Mul(Expr):
    a: Expr
    b: Expr
    _prec = 20

    def evaluate(self, env):
        return self.a.evaluate(env) * self.b.evaluate(env)

    def diff(self, var):
        return add(mul(self.a.diff(var), self.b), mul(self.a, self.b.diff(var)))

    def variables(self):
        return self.a.variables() | self.b.variables()

    def _src(self):
        return _wrap(self.a, 20) + "*" + _wrap(self.b, 20, strict=True)


@dataclass(frozen=True)
class Div(Expr):
    a: Expr
    b: Expr
    _prec = 20

    def evaluate(self, env):
        return self.a.evaluate(env) / self.b.evaluate(env)

    def diff(self, var):
        da, db = self.a.diff(var), self.b.diff(var)
        return div(sub(mul(da, self.b), mul(self.a, db)), mul(self.b, self.b))

    def variables(self):
        return self.a.variables() | self.b.variables()

    def _src(self):
        return _wrap(self.a, 20) + "/" + _wrap(self.b, 20, strict=True)


@dataclass(frozen=True)
class Pow(Expr):
    a: Expr
    b: Expr
    _prec = 30

    def evaluate(self, env):
        return self.a.evaluate(env) ** self.b.evaluate(env)

    def diff(self, var):
        da, db = self.a.diff(var), self.b.diff(var)
        if isinstance(self.b, Const):
            # b * a**(b-1) * a'
            return mul(
                mul(self.b, Pow(self.a, Const(self.b.value - 1.0))), da
            )
        # a**b * (b' log a + b a'/a)
        return mul(
            self,
            add(mul(db, Call("log", self.a)), mul(self.b, div(da, self.a))),
        )

    def variables(self):
        return self.a.variables() | self.b.variables()

    def _src(self):
        # ** is right-associative; unary minus binds looser than **
        return _wrap(self.a, 30, strict=True) + "**" + _wrap(self.b, 30)


@dataclass(frozen=True)
class Call(Expr):
    fn: str
    arg: Expr

    def evaluate(self, env):
        return FUNCTIONS[self.fn](self.arg.evaluate(env))

    def diff(self, var):
        da = self.arg.diff(var)
        a = self.arg
        if self.fn == "sin":
            outer = Call("cos", a)
        elif self.fn == "cos":
            outer = neg(Call("sin", a))
        elif self.fn == "exp":
            outer = self
        elif self.fn == "log":
            return div(da, a)
        elif self.fn == "abs":
            outer = Call("sign", a)
        elif self.fn == "tanh":
            outer = sub(Const(1.0), mul(self, self))
        elif self.fn == "sign":
            return Const(0.0)  # derivative almost everywhere
        else:  # pragma: no cover - grammar is closed
            raise ExpressionError(f"unknown function {self.fn!r}")
        return mul(outer, da)

    def variables(self):
        return self.arg.variables()

    def _src(self):
        return f"{self.fn}({self.arg._src()})"


# ---------------------------------------------------------------------------
# smart constructors: light folding keeps derivative trees small


def _is_const(node: Expr, value: float) -> bool:
    return isinstance(node, Const) and node.value == value


def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    return Sub(a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.a
    return Neg(a)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return Const(0.0)
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return Const(0.0)
    if _is_const(b, 1.0):
        return a
    return Div(a, b)


# ---------------------------------------------------------------------------
# parsing


_BINOPS = {
    ast.Add: Add,
    ast.Sub: Sub,
    ast.Mult: Mul,
    ast.Div: Div,
    ast.Pow: Pow,
}


def parse(text: str) -> Expr:
    """Parse an expression string into a tree.

    Raises:
        ExpressionSyntaxError: the text does not parse, or uses syntax
            outside the closed grammar (only ``+ - * / ** ^``, the known
            functions, numeric literals, and identifiers are allowed).
    """
    if not isinstance(text, str):
        raise ExpressionSyntaxError(f"expected expression string, got {text!r}")
    source = text.replace("^", "**")
    try:
        node = ast.parse(source, mode="eval")
    except SyntaxError as err:
        raise ExpressionSyntaxError(
            f"cannot parse {text!r}: {err.msg} (column {err.offset})"
        ) from None
    return _convert(node.body, text)


def _convert(node: ast.AST, origin: str) -> Expr:
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        cls = _BINOPS[type(node.op)]
        return cls(_convert(node.left, origin), _convert(node.right, origin))
    if isinstance(node, ast.UnaryOp):
        if isinstance(node.op, ast.USub):
            inner = _convert(node.operand, origin)
            if isinstance(inner, Const):
                return Const(-inner.value)
            return Neg(inner)
        if isinstance(node.op, ast.UAdd):
            return _convert(node.operand, origin)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return Const(float(node.value))
        raise ExpressionSyntaxError(
            f"non-numeric literal {node.value!r} in {origin!r}"
        )
    if isinstance(node, ast.Name):
        if node.id in _CONSTANTS:
            return Const(_CONSTANTS[node.id])
        return Var(node.id)
    if isinstance(node, ast.Call):
        if (
            isinstance(node.func, ast.Name)
            and node.func.id in FUNCTIONS
            and len(node.args) == 1
            and not node.keywords
        ):
            return Call(node.func.id, _convert(node.args[0], origin))
        name = getattr(node.func, "id", "<expr>")
        raise ExpressionSyntaxError(
            f"unknown or malformed function call {name!r} in {origin!r}; "
            f"available functions: {sorted(FUNCTIONS)}"
        )
    raise ExpressionSyntaxError(
        f"unsupported syntax {ast.dump(node)} in {origin!r}"
    )


def evaluate(expr: Expr, env: dict, checked: bool = True):
    """Evaluate with numeric-domain checking.

    With ``checked`` the call raises :class:`DomainError` when the result
    is non-finite or numpy signals an invalid operation, instead of
    propagating NaN/inf silently.
    """
    if not checked:
        return expr.evaluate(env)
    try:
        with np.errstate(all="raise"):
            out = expr.evaluate(env)
    except (FloatingPointError, ZeroDivisionError, OverflowError) as err:
        raise DomainError(f"{expr} left its domain: {err}") from None
    if not np.all(np.isfinite(out)):
        raise DomainError(f"{expr} evaluated to a non-finite value")
    return out
