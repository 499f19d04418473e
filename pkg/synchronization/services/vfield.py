"""
synchronization/services/vfield.py

Scalar vector fields f(t, x) written as text, e.g. "(-1+0.1)*x + 10*sin(t)".

Responsibilities:
- Grammar (pyparsing): literals, variables t and x, unary minus,
  sin/cos/exp/tanh/abs, + - * / and ^ with a nonnegative integer literal
  exponent. Precedence: ^ > unary - > * / > + -; binary operators associate
  to the left; a^b^c is rejected.
- Immutable AST and a fully parenthesized canonical printer.
- Evaluation compiled to closures, and forward-mode (value, d/dt, d/dx).
- Structural x-degree analysis used by the scenario validator.
"""
from __future__ import annotations

import math
import operator
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple, Union

import pyparsing as pp

from synchronization.services.errors import NonFinite, ParseError, UnknownIdentifier

FUNCTIONS: Tuple[str, ...] = ("sin", "cos", "exp", "tanh", "abs")
VARIABLES: Tuple[str, ...] = ("t", "x")


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Literal:
    value: float


@dataclass(frozen=True)
class Variable:
    name: str


@dataclass(frozen=True)
class Unary:
    operand: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Power:
    base: "Node"
    exponent: int


Node = Union[Literal, Variable, Unary, Call, Binary, Power]


# placeholders produced by the grammar, resolved after the parse
@dataclass(frozen=True)
class _Name:
    name: str
    loc: int


@dataclass(frozen=True)
class _RawCall:
    name: str
    loc: int
    arg: object


def to_source(node: Node) -> str:
    if isinstance(node, Literal):
        return repr(float(node.value))
    if isinstance(node, Variable):
        return node.name
    if isinstance(node, Unary):
        return f"(-{to_source(node.operand)})"
    if isinstance(node, Call):
        return f"{node.func}({to_source(node.arg)})"
    if isinstance(node, Binary):
        return f"({to_source(node.left)} {node.op} {to_source(node.right)})"
    if isinstance(node, Power):
        return f"({to_source(node.base)}^{node.exponent})"
    raise TypeError(f"not an expression node: {node!r}")


# ---------------------------------------------------------------------------
# Grammar
# ---------------------------------------------------------------------------
def _fold_left(toks):
    items = list(toks)
    node = items[0]
    for k in range(1, len(items), 2):
        node = Binary(items[k], node, items[k + 1])
    return node


def _literal(s, loc, toks):
    value = float(toks[0])
    if not math.isfinite(value):
        raise pp.ParseFatalException(s, loc, f"literal {toks[0]} overflows a double")
    return Literal(value)


def _power(toks):
    if len(toks) == 1:
        return toks[0]
    return Power(toks[0], int(toks[1]))


def _build_grammar() -> pp.ParserElement:
    number = pp.Regex(r"(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?").set_name("number")
    number.set_parse_action(_literal)
    ident = pp.Regex(r"[A-Za-z_][A-Za-z0-9_]*").set_name("identifier")
    integer = pp.Regex(r"\d+").set_name("integer exponent")
    lpar, rpar = pp.Suppress("("), pp.Suppress(")")

    expr = pp.Forward().set_name("expression")
    call = (ident + lpar + expr + rpar).set_parse_action(lambda s, loc, toks: _RawCall(toks[0], loc, toks[1]))
    name = ident.copy().set_parse_action(lambda s, loc, toks: _Name(toks[0], loc))
    atom = call | number | name | (lpar + expr + rpar)

    power = (atom + pp.Optional(pp.Suppress("^") + integer)).set_parse_action(_power)
    unary = pp.Forward().set_name("operand")
    unary <<= (pp.Suppress("-") + unary).set_parse_action(lambda toks: Unary(toks[0])) | power
    term = (unary + pp.ZeroOrMore(pp.one_of("* /") + unary)).set_parse_action(_fold_left)
    expr <<= (term + pp.ZeroOrMore(pp.one_of("+ -") + term)).set_parse_action(_fold_left)
    return expr


_GRAMMAR = _build_grammar()


def _byte_offset(source: str, loc: int) -> int:
    return len(source[:loc].encode("utf-8"))


def _resolve(node, source: str) -> Node:
    if isinstance(node, _Name):
        if node.name in VARIABLES:
            return Variable(node.name)
        if node.name in FUNCTIONS:
            raise ParseError(_byte_offset(source, node.loc), f"function {node.name!r} needs an argument in parentheses")
        raise UnknownIdentifier(node.name, _byte_offset(source, node.loc))
    if isinstance(node, _RawCall):
        if node.name not in FUNCTIONS:
            raise UnknownIdentifier(node.name, _byte_offset(source, node.loc))
        return Call(node.name, _resolve(node.arg, source))
    if isinstance(node, Unary):
        return Unary(_resolve(node.operand, source))
    if isinstance(node, Binary):
        return Binary(node.op, _resolve(node.left, source), _resolve(node.right, source))
    if isinstance(node, Power):
        return Power(_resolve(node.base, source), node.exponent)
    return node


# ---------------------------------------------------------------------------
# Compilation
# ---------------------------------------------------------------------------
Scalar = Callable[[float, float], float]
Dual = Callable[[float, float], Tuple[float, float, float]]

_FUNCS: Dict[str, Callable[[float], float]] = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "tanh": math.tanh,
    "abs": abs,
}
_OPS: Dict[str, Callable[[float, float], float]] = {
    "+": operator.add,
    "-": operator.sub,
    "*": operator.mul,
    "/": operator.truediv,
}


def _compile(node: Node) -> Scalar:
    if isinstance(node, Literal):
        c = float(node.value)
        return lambda t, x: c
    if isinstance(node, Variable):
        if node.name == "t":
            return lambda t, x: t
        return lambda t, x: x
    if isinstance(node, Unary):
        f = _compile(node.operand)
        return lambda t, x: -f(t, x)
    if isinstance(node, Call):
        g, f = _FUNCS[node.func], _compile(node.arg)
        return lambda t, x: g(f(t, x))
    if isinstance(node, Binary):
        op, a, b = _OPS[node.op], _compile(node.left), _compile(node.right)
        return lambda t, x: op(a(t, x), b(t, x))
    if isinstance(node, Power):
        f, n = _compile(node.base), node.exponent
        return lambda t, x: f(t, x) ** n
    raise TypeError(f"not an expression node: {node!r}")


def _sign(u: float) -> float:
    return (u > 0.0) - (u < 0.0)


def _dual_call(func: str, u: float, du_t: float, du_x: float) -> Tuple[float, float, float]:
    if func == "sin":
        d = math.cos(u)
        return math.sin(u), d * du_t, d * du_x
    if func == "cos":
        d = -math.sin(u)
        return math.cos(u), d * du_t, d * du_x
    if func == "exp":
        e = math.exp(u)
        return e, e * du_t, e * du_x
    if func == "tanh":
        th = math.tanh(u)
        d = 1.0 - th * th
        return th, d * du_t, d * du_x
    s = _sign(u)
    return abs(u), s * du_t, s * du_x


def _compile_dual(node: Node) -> Dual:
    if isinstance(node, Literal):
        c = float(node.value)
        return lambda t, x: (c, 0.0, 0.0)
    if isinstance(node, Variable):
        if node.name == "t":
            return lambda t, x: (t, 1.0, 0.0)
        return lambda t, x: (x, 0.0, 1.0)
    if isinstance(node, Unary):
        f = _compile_dual(node.operand)

        def neg(t, x):
            v, dt, dx = f(t, x)
            return -v, -dt, -dx

        return neg
    if isinstance(node, Call):
        func, f = node.func, _compile_dual(node.arg)
        return lambda t, x: _dual_call(func, *f(t, x))
    if isinstance(node, Binary):
        a, b, op = _compile_dual(node.left), _compile_dual(node.right), node.op

        def binary(t, x):
            u, ut, ux = a(t, x)
            v, vt, vx = b(t, x)
            if op == "+":
                return u + v, ut + vt, ux + vx
            if op == "-":
                return u - v, ut - vt, ux - vx
            if op == "*":
                return u * v, ut * v + u * vt, ux * v + u * vx
            q = u / v
            return q, (ut - q * vt) / v, (ux - q * vx) / v

        return binary
    if isinstance(node, Power):
        f, n = _compile_dual(node.base), node.exponent

        def power(t, x):
            u, ut, ux = f(t, x)
            if n == 0:
                return 1.0, 0.0, 0.0
            p = u ** (n - 1)
            return p * u, n * p * ut, n * p * ux

        return power
    raise TypeError(f"not an expression node: {node!r}")


# ---------------------------------------------------------------------------
# Public surface
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class VectorField:
    root: Node
    source: str = field(default="", compare=False)
    _value: Scalar = field(default=None, compare=False, repr=False)
    _dual: Dual = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_value", _compile(self.root))
        object.__setattr__(self, "_dual", _compile_dual(self.root))

    def __str__(self) -> str:
        return to_source(self.root)

    def __call__(self, t: float, x: float) -> float:
        return evaluate(self, t, x)


def parse(source: str) -> VectorField:
    try:
        raw = _GRAMMAR.parse_string(source, parse_all=True)[0]
    except pp.ParseBaseException as exc:
        raise ParseError(_byte_offset(source, exc.loc), exc.msg) from None
    return VectorField(root=_resolve(raw, source), source=source)


def _locate_nonfinite(root: Node, t: float, x: float) -> str:
    culprit = []

    def walk(node: Node) -> float:
        if isinstance(node, Literal):
            return float(node.value)
        if isinstance(node, Variable):
            return t if node.name == "t" else x
        try:
            if isinstance(node, Unary):
                value = -walk(node.operand)
            elif isinstance(node, Call):
                value = _FUNCS[node.func](walk(node.arg))
            elif isinstance(node, Binary):
                left = walk(node.left)
                right = walk(node.right)
                value = _OPS[node.op](left, right)
            else:
                value = walk(node.base) ** node.exponent
        except (ArithmeticError, ValueError):
            value = math.nan
        if not culprit and not math.isfinite(value):
            culprit.append(to_source(node))
        return value

    walk(root)
    return culprit[0] if culprit else to_source(root)


def evaluate(vf: VectorField, t: float, x: float) -> float:
    try:
        value = vf._value(t, x)
    except (ArithmeticError, ValueError):
        value = math.nan
    if not math.isfinite(value):
        raise NonFinite(_locate_nonfinite(vf.root, t, x), t, x)
    return value


def eval_with_partials(vf: VectorField, t: float, x: float) -> Tuple[float, float, float]:
    try:
        value, df_dt, df_dx = vf._dual(t, x)
    except (ArithmeticError, ValueError):
        value = df_dt = df_dx = math.nan
    if not (math.isfinite(value) and math.isfinite(df_dt) and math.isfinite(df_dx)):
        raise NonFinite(_locate_nonfinite(vf.root, t, x), t, x)
    return value, df_dt, df_dx


# ---------------------------------------------------------------------------
# Structure
# ---------------------------------------------------------------------------
def x_degree(node: Node) -> Optional[int]:
    """Polynomial degree in x, or None when x enters non-polynomially."""
    if isinstance(node, Literal):
        return 0
    if isinstance(node, Variable):
        return 1 if node.name == "x" else 0
    if isinstance(node, Unary):
        return x_degree(node.operand)
    if isinstance(node, Call):
        return 0 if x_degree(node.arg) == 0 else None
    if isinstance(node, Power):
        d = x_degree(node.base)
        return None if d is None else d * node.exponent
    left, right = x_degree(node.left), x_degree(node.right)
    if left is None or right is None:
        return None
    if node.op in ("+", "-"):
        return max(left, right)
    if node.op == "*":
        return left + right
    return left if right == 0 else None


def is_affine(vf: VectorField) -> bool:
    d = x_degree(vf.root)
    return d is not None and d <= 1


def _has_variables(node: Node) -> bool:
    if isinstance(node, Literal):
        return False
    if isinstance(node, Variable):
        return True
    if isinstance(node, (Unary, Call)):
        return _has_variables(node.operand if isinstance(node, Unary) else node.arg)
    if isinstance(node, Power):
        return _has_variables(node.base)
    return _has_variables(node.left) or _has_variables(node.right)


def bounded_in_t(node: Node) -> bool:
    """Conservative: True only when an x-free node is bounded for every t."""
    if isinstance(node, Literal):
        return True
    if isinstance(node, Variable):
        return False
    if isinstance(node, Unary):
        return bounded_in_t(node.operand)
    if isinstance(node, Call):
        return node.func in ("sin", "cos", "tanh") or bounded_in_t(node.arg)
    if isinstance(node, Power):
        return node.exponent == 0 or bounded_in_t(node.base)
    if node.op == "/":
        return bounded_in_t(node.left) and not _has_variables(node.right)
    return bounded_in_t(node.left) and bounded_in_t(node.right)


def _bounded_slope(node: Node) -> bool:
    # node is affine in x; checks that its x-coefficient is bounded in t
    if x_degree(node) == 0:
        return True
    if isinstance(node, Variable):
        return True
    if isinstance(node, Unary):
        return _bounded_slope(node.operand)
    if isinstance(node, Power):
        return _bounded_slope(node.base)
    if node.op in ("+", "-"):
        return _bounded_slope(node.left) and _bounded_slope(node.right)
    if node.op == "*":
        factor, affine = (node.left, node.right) if x_degree(node.left) == 0 else (node.right, node.left)
        return bounded_in_t(factor) and _bounded_slope(affine)
    return _bounded_slope(node.left) and not _has_variables(node.right)


def lipschitz_in_x(vf: VectorField) -> bool:
    """Affine in x with an x-coefficient bounded over all t, hence globally Lipschitz."""
    return is_affine(vf) and _bounded_slope(vf.root)
