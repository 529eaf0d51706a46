"""Arithmetic expression grammar for potentials and generators.

Grammar (lowest to highest precedence)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' exponent)?
    exponent:= '-' exponent | power          # right-associative
    atom    := NUMBER | NAME | FUNC '(' expr ')' | '(' expr ')'

``^`` binds tighter than unary minus, so ``-q1^2`` is ``-(q1^2)``.
Variables are ``q1..qn`` and ``p1..pn``; functions are sin, cos, exp, sqrt.
Evaluation is vectorized over numpy arrays.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import InputError, NumericError

FUNCTIONS = ("sin", "cos", "exp", "sqrt")
_VAR_RE = re.compile(r"^[qp][1-9][0-9]*$")
_TOKEN_RE = re.compile(
    r"(?P<ws>[ \t\r\n]+)"
    r"|(?P<num>(?:[0-9]+\.?[0-9]*|\.[0-9]+)(?:[eE][+-]?[0-9]+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()])"
)


def _line_col(src: str, offset: int) -> tuple[int, int]:
    line = src.count("\n", 0, offset) + 1
    col = offset - (src.rfind("\n", 0, offset) + 1) + 1
    return line, col


class ExpressionSyntaxError(InputError):
    def __init__(self, src: str, offset: int, message: str):
        self.line, self.column = _line_col(src, offset)
        self.offset = offset
        super().__init__("cli.parse_expression", f"{self.line}:{self.column}: {message}")


class EvaluationError(NumericError):
    def __init__(self, node: "Node", message: str):
        self.span = node.span
        super().__init__("cli.evaluate_expression", f"{message} at span {node.span[0]}..{node.span[1]}")


@dataclass(frozen=True)
class Num:
    value: float
    span: tuple[int, int] = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class Var:
    name: str
    span: tuple[int, int] = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Node"
    span: tuple[int, int] = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Node"
    right: "Node"
    span: tuple[int, int] = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"
    span: tuple[int, int] = field(default=(0, 0), compare=False)


Node = Union[Num, Var, Unary, Binary, Call]


@dataclass(frozen=True)
class ExpressionAst:
    """A parsed expression together with its source text."""

    root: Node
    source: str = field(default="", compare=False)

    def variables(self) -> set[str]:
        out: set[str] = set()
        _collect_vars(self.root, out)
        return out

    def evaluate(self, env: Mapping[str, object]):
        return _eval(self.root, env)

    def pretty(self) -> str:
        return _pretty(self.root)

    def compile(self, names: Sequence[str], checked: bool = True) -> Callable:
        """Fast evaluator f(*arrays) for the given argument order.

        With ``checked``, non-finite results are re-evaluated by the
        interpreter so that domain errors still raise with their source span.
        Unchecked evaluators return raw numpy results.
        """
        code = _to_python(self.root)
        args = ", ".join(f"_{n}" for n in names)
        fast = eval(f"lambda {args}: {code}", {"_np": np})
        if not checked:
            return fast

        def run(*vals):
            with np.errstate(all="ignore"):
                out = fast(*vals)
            if not np.all(np.isfinite(out)):
                return self.evaluate(dict(zip(names, vals)))
            return out

        return run

    def derivative(self, name: str) -> "ExpressionAst":
        return ExpressionAst(_simplify(_diff(self.root, name)))

    def __str__(self) -> str:
        return self.pretty()


# -- tokenizer / parser ------------------------------------------------------


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


def _tokenize(src: str) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise ExpressionSyntaxError(src, pos, f"unexpected character {src[pos]!r}")
        kind = m.lastgroup
        if kind != "ws":
            toks.append(_Tok(kind, m.group(), pos))
        pos = m.end()
    toks.append(_Tok("end", "", len(src)))
    return toks


class _Parser:
    def __init__(self, src: str, variables: Iterable[str] | None):
        self.src = src
        self.toks = _tokenize(src)
        self.i = 0
        self.allowed = None if variables is None else set(variables)

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> _Tok:
        t = self.peek()
        if t.text != text or t.kind == "end":
            found = "end of input" if t.kind == "end" else repr(t.text)
            raise ExpressionSyntaxError(self.src, t.pos, f"expected {text!r}, found {found}")
        return self.take()

    def parse(self) -> Node:
        if self.peek().kind == "end":
            raise ExpressionSyntaxError(self.src, 0, "empty expression")
        node = self.expr()
        t = self.peek()
        if t.kind != "end":
            raise ExpressionSyntaxError(self.src, t.pos, f"unexpected token {t.text!r}")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek().text in ("+", "-") and self.peek().kind == "op":
            op = self.take().text
            rhs = self.term()
            node = Binary(op, node, rhs, (node.span[0], rhs.span[1]))
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek().text in ("*", "/") and self.peek().kind == "op":
            op = self.take().text
            rhs = self.unary()
            node = Binary(op, node, rhs, (node.span[0], rhs.span[1]))
        return node

    def unary(self) -> Node:
        t = self.peek()
        if t.kind == "op" and t.text == "-":
            self.take()
            operand = self.unary()
            return Unary("-", operand, (t.pos, operand.span[1]))
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek().kind == "op" and self.peek().text == "^":
            self.take()
            exp = self.exponent()
            return Binary("^", base, exp, (base.span[0], exp.span[1]))
        return base

    def exponent(self) -> Node:
        t = self.peek()
        if t.kind == "op" and t.text == "-":
            self.take()
            operand = self.exponent()
            return Unary("-", operand, (t.pos, operand.span[1]))
        return self.power()

    def atom(self) -> Node:
        t = self.take()
        if t.kind == "num":
            return Num(float(t.text), (t.pos, t.pos + len(t.text)))
        if t.kind == "name":
            end = t.pos + len(t.text)
            if t.text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                close = self.expect(")")
                return Call(t.text, arg, (t.pos, close.pos + 1))
            if not _VAR_RE.match(t.text) or (self.allowed is not None and t.text not in self.allowed):
                raise ExpressionSyntaxError(self.src, t.pos, f"unknown identifier {t.text!r}")
            return Var(t.text, (t.pos, end))
        if t.kind == "op" and t.text == "(":
            node = self.expr()
            close = self.expect(")")
            return replace(node, span=(t.pos, close.pos + 1))
        found = "end of input" if t.kind == "end" else repr(t.text)
        raise ExpressionSyntaxError(self.src, t.pos, f"unexpected {found}")


def parse_expression(src: str, variables: Iterable[str] | None = None) -> ExpressionAst:
    """Parse ``src``. ``variables`` optionally restricts the allowed names."""
    if not isinstance(src, str):
        raise InputError("cli.parse_expression", "expression must be a string")
    return ExpressionAst(_Parser(src, variables).parse(), src)


# -- evaluation ----------------------------------------------------------------


def _eval(node: Node, env: Mapping[str, object]):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.name not in env:
            raise EvaluationError(node, f"variable {node.name} not bound")
        v = env[node.name]
        return float(v) if np.isscalar(v) else np.asarray(v, dtype=float)
    if isinstance(node, Unary):
        return -_eval(node.operand, env)
    if isinstance(node, Call):
        x = _eval(node.arg, env)
        if node.func == "sqrt":
            if np.any(np.asarray(x) < 0):
                raise EvaluationError(node, "sqrt of negative value")
            return np.sqrt(x)
        return getattr(np, node.func)(x)
    a = _eval(node.left, env)
    b = _eval(node.right, env)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        if np.any(np.asarray(b) == 0):
            raise EvaluationError(node, "division by zero")
        return a / b
    with np.errstate(all="ignore"):
        out = np.power(a, b) if not (np.isscalar(a) and np.isscalar(b)) else _scalar_pow(a, b)
    if np.any(~np.isfinite(np.asarray(out))) and np.all(np.isfinite(np.asarray(a))) and np.all(np.isfinite(np.asarray(b))):
        raise EvaluationError(node, "power undefined for these operands")
    return out


def _scalar_pow(a: float, b: float) -> float:
    try:
        r = a**b
    except ZeroDivisionError:
        return math.inf
    if isinstance(r, complex):
        return math.nan
    return r


# -- printing ------------------------------------------------------------------


def _fmt_num(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _pretty(node: Node) -> str:
    if isinstance(node, Num):
        return _fmt_num(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        return f"(-{_pretty(node.operand)})"
    if isinstance(node, Call):
        return f"{node.func}({_pretty(node.arg)})"
    return f"({_pretty(node.left)} {node.op} {_pretty(node.right)})"


def _to_python(node: Node) -> str:
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return f"_{node.name}"
    if isinstance(node, Unary):
        return f"(-{_to_python(node.operand)})"
    if isinstance(node, Call):
        return f"_np.{node.func}({_to_python(node.arg)})"
    op = "**" if node.op == "^" else node.op
    if op == "**":
        return f"_np.power({_to_python(node.left)}, {_to_python(node.right)})"
    return f"({_to_python(node.left)} {op} {_to_python(node.right)})"


def _collect_vars(node: Node, out: set[str]) -> None:
    if isinstance(node, Var):
        out.add(node.name)
    elif isinstance(node, Unary):
        _collect_vars(node.operand, out)
    elif isinstance(node, Call):
        _collect_vars(node.arg, out)
    elif isinstance(node, Binary):
        _collect_vars(node.left, out)
        _collect_vars(node.right, out)


# -- symbolic differentiation --------------------------------------------------

_ZERO = Num(0.0)
_ONE = Num(1.0)


def _diff(node: Node, x: str) -> Node:
    if isinstance(node, Num):
        return _ZERO
    if isinstance(node, Var):
        return _ONE if node.name == x else _ZERO
    if isinstance(node, Unary):
        return Unary("-", _diff(node.operand, x))
    if isinstance(node, Call):
        u = node.arg
        du = _diff(u, x)
        if node.func == "sin":
            outer = Call("cos", u)
        elif node.func == "cos":
            outer = Unary("-", Call("sin", u))
        elif node.func == "exp":
            outer = node
        else:
            outer = Binary("/", _ONE, Binary("*", Num(2.0), node))
        return Binary("*", outer, du)
    a, b = node.left, node.right
    da, db = _diff(a, x), _diff(b, x)
    if node.op == "+":
        return Binary("+", da, db)
    if node.op == "-":
        return Binary("-", da, db)
    if node.op == "*":
        return Binary("+", Binary("*", da, b), Binary("*", a, db))
    if node.op == "/":
        return Binary("/", Binary("-", Binary("*", da, b), Binary("*", a, db)), Binary("^", b, Num(2.0)))
    # power
    if isinstance(_simplify(db), Num) and _simplify(db).value == 0.0:
        return Binary("*", Binary("*", b, Binary("^", a, Binary("-", b, _ONE))), da)
    # general a^b = exp(b ln a) is outside the grammar; only constant exponents differentiate
    raise InputError("cli.parse_expression", "derivative of a variable exponent is not supported")


def _is_num(n: Node, v: float | None = None) -> bool:
    return isinstance(n, Num) and (v is None or n.value == v)


def _simplify(node: Node) -> Node:
    if isinstance(node, (Num, Var)):
        return node
    if isinstance(node, Unary):
        o = _simplify(node.operand)
        if _is_num(o):
            return Num(-o.value)
        if isinstance(o, Unary):
            return o.operand
        return Unary("-", o)
    if isinstance(node, Call):
        return Call(node.func, _simplify(node.arg))
    a, b = _simplify(node.left), _simplify(node.right)
    op = node.op
    if _is_num(a) and _is_num(b) and op != "/" and op != "^":
        return Num({"+": a.value + b.value, "-": a.value - b.value, "*": a.value * b.value}[op])
    if op == "+":
        if _is_num(a, 0.0):
            return b
        if _is_num(b, 0.0):
            return a
    elif op == "-":
        if _is_num(b, 0.0):
            return a
        if _is_num(a, 0.0):
            return _simplify(Unary("-", b))
    elif op == "*":
        if _is_num(a, 0.0) or _is_num(b, 0.0):
            return _ZERO
        if _is_num(a, 1.0):
            return b
        if _is_num(b, 1.0):
            return a
    elif op == "/":
        if _is_num(a, 0.0) and not _is_num(b, 0.0):
            return _ZERO
        if _is_num(b, 1.0):
            return a
    elif op == "^":
        if _is_num(b, 1.0):
            return a
        if _is_num(b, 0.0):
            return _ONE
    return Binary(op, a, b)


def compile_potential(src: str, dim: int):
    """Return ``V(q)`` evaluating ``src`` on arrays of shape (..., dim)."""
    names = [f"q{i + 1}" for i in range(dim)]
    ast = parse_expression(src, names)
    fast = ast.compile(names)

    def V(q):
        q = np.asarray(q, dtype=float)
        return np.broadcast_to(np.asarray(fast(*[q[..., i] for i in range(dim)]), dtype=float), q.shape[:-1]).copy()

    V.expression = ast  # type: ignore[attr-defined]
    return V
