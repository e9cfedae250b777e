"""Payoff expression language.

A small recursive-descent parser for continuous payoffs of positional
variables ``x1..xn``::

    expr    := term (("+" | "-") term)*
    term    := unary ("*" unary)*
    unary   := "-" unary | primary
    primary := NUMBER | VAR | "(" expr ")"
             | abs(expr) | exp(expr) | pow(expr, INT)
             | min(expr, ...) | max(expr, ...)

Division and fractional powers are deliberately absent, so every payoff
is continuous on all of R^n.  ``exp`` is allowed but may overflow on wide
domains; keeping its argument bounded is the caller's job.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Union

import numpy as np

from .errors import (
    DimensionError,
    InvalidExponentError,
    PayoffSyntaxError,
    UnknownIdentifierError,
)

__all__ = [
    "Const",
    "Var",
    "Unary",
    "Binary",
    "Pow",
    "Extremum",
    "PayoffExpr",
    "EventPredicate",
    "parse_payoff",
    "parse_event",
    "eval_payoff",
    "eval_payoff_batch",
    "to_source",
]


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" | "abs" | "exp"
    arg: "Node"


@dataclass(frozen=True)
class Binary:
    op: str  # "+" | "-" | "*"
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: int


@dataclass(frozen=True)
class Extremum:
    op: str  # "min" | "max"
    args: tuple["Node", ...]


Node = Union[Const, Var, Unary, Binary, Pow, Extremum]


def _walk(node: Node) -> Iterator[Node]:
    yield node
    if isinstance(node, Unary):
        yield from _walk(node.arg)
    elif isinstance(node, Binary):
        yield from _walk(node.left)
        yield from _walk(node.right)
    elif isinstance(node, Pow):
        yield from _walk(node.base)
    elif isinstance(node, Extremum):
        for a in node.args:
            yield from _walk(a)


def _max_index(node: Node) -> int:
    return max((n.index for n in _walk(node) if isinstance(n, Var)), default=0)


@dataclass(frozen=True)
class PayoffExpr:
    """Parsed payoff: an immutable AST plus its arity.

    ``arity`` is the largest variable index the payoff may be evaluated
    against; it is at least the largest index referenced in ``root``.
    """

    root: Node
    arity: int = -1
    source: str | None = field(default=None, compare=False)

    def __post_init__(self):
        used = _max_index(self.root)
        if self.arity < 0:
            object.__setattr__(self, "arity", used)
        elif self.arity < used:
            raise DimensionError(f"payoff references x{used} but arity is {self.arity}")

    @property
    def variables(self) -> frozenset[int]:
        return frozenset(n.index for n in _walk(self.root) if isinstance(n, Var))

    def with_arity(self, arity: int) -> "PayoffExpr":
        return PayoffExpr(self.root, arity, self.source)

    def __call__(self, *xs: float) -> float:
        return eval_payoff(self, xs)

    def __neg__(self) -> "PayoffExpr":
        return PayoffExpr(Unary("neg", self.root), self.arity)

    def __add__(self, other: "PayoffExpr") -> "PayoffExpr":
        return PayoffExpr(Binary("+", self.root, other.root), max(self.arity, other.arity))

    def scaled(self, factor: float) -> "PayoffExpr":
        return PayoffExpr(Binary("*", Const(float(factor)), self.root), self.arity)

    def shifted(self, offset: float) -> "PayoffExpr":
        return PayoffExpr(Binary("+", self.root, Const(float(offset))), self.arity)

    def __str__(self) -> str:
        return to_source(self)


@dataclass(frozen=True)
class EventPredicate:
    lhs: PayoffExpr
    relation: str  # one of "<", "<=", ">=", ">"
    rhs: PayoffExpr

    @property
    def arity(self) -> int:
        return max(self.lhs.arity, self.rhs.arity)

    def evaluate_batch(self, points) -> np.ndarray:
        a = eval_payoff_batch(self.lhs, points)
        b = eval_payoff_batch(self.rhs, points)
        return _RELATIONS[self.relation](a, b)

    def __str__(self) -> str:
        return f"{to_source(self.lhs)} {self.relation} {to_source(self.rhs)}"


_RELATIONS = {
    "<": np.less,
    "<=": np.less_equal,
    ">=": np.greater_equal,
    ">": np.greater,
}


# ---------------------------------------------------------------------------
# tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<rel><=|>=|<|>|≤|≥)
  | (?P<op>[-+*(),])
    """,
    re.VERBOSE,
)

_FUNCTIONS = {"abs": 1, "exp": 1, "pow": 2, "min": None, "max": None}
_VAR_RE = re.compile(r"x([1-9]\d*)\Z")


@dataclass(frozen=True)
class _Token:
    kind: str  # "num" | "ident" | "rel" | "op" | "eof"
    text: str
    offset: int  # byte offset into the UTF-8 source


def _tokenize(src: str) -> list[_Token]:
    tokens = []
    pos = 0
    byte_pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise PayoffSyntaxError(f"unexpected character {src[pos]!r}", byte_pos)
        text = m.group()
        if m.lastgroup != "ws":
            text = {"≤": "<=", "≥": ">="}.get(text, text)
            tokens.append(_Token(m.lastgroup, text, byte_pos))
        byte_pos += len(m.group().encode("utf-8"))
        pos = m.end()
    tokens.append(_Token("eof", "", byte_pos))
    return tokens


class _Parser:
    def __init__(self, src: str):
        self.tokens = _tokenize(src)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> _Token:
        if self.tok.text != text or self.tok.kind == "eof":
            self.fail({text})
        return self.advance()

    def fail(self, expected):
        found = "end of input" if self.tok.kind == "eof" else repr(self.tok.text)
        raise PayoffSyntaxError(f"unexpected {found}", self.tok.offset, frozenset(expected))

    def expr(self) -> Node:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance().text
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text == "*":
            self.advance()
            node = Binary("*", node, self.unary())
        return node

    def unary(self) -> Node:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.advance()
            return Unary("neg", self.unary())
        return self.primary()

    def primary(self) -> Node:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return Const(float(tok.text))
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind == "ident":
            self.advance()
            m = _VAR_RE.match(tok.text)
            if m:
                return Var(int(m.group(1)))
            if tok.text not in _FUNCTIONS:
                raise UnknownIdentifierError(tok.text, tok.offset)
            return self.call(tok)
        self.fail({"number", "variable", "function", "(", "-"})

    def call(self, name: _Token) -> Node:
        self.expect("(")
        if name.text == "pow":
            base = self.expr()
            self.expect(",")
            exponent = self.exponent()
            self.expect(")")
            return Pow(base, exponent)
        args = [self.expr()]
        while self.tok.text == ",":
            self.advance()
            args.append(self.expr())
        self.expect(")")
        if name.text in ("abs", "exp"):
            if len(args) != 1:
                raise PayoffSyntaxError(f"{name.text} takes exactly one argument", name.offset, frozenset({")"}))
            return Unary(name.text, args[0])
        return Extremum(name.text, tuple(args))

    def exponent(self) -> int:
        start = self.tok.offset
        node = self.expr()
        value = None
        if isinstance(node, Const):
            value = node.value
        elif isinstance(node, Unary) and node.op == "neg" and isinstance(node.arg, Const):
            value = -node.arg.value
        if value is None:
            raise InvalidExponentError("pow exponent must be a numeric literal", start)
        if value < 0:
            raise InvalidExponentError(f"pow exponent {value!r} is negative", start)
        if value != int(value):
            raise InvalidExponentError(f"pow exponent {value!r} is not an integer", start)
        return int(value)


def parse_payoff(src: str, arity: int | None = None) -> PayoffExpr:
    """Parse ``src`` into a :class:`PayoffExpr`.

    >>> parse_payoff("max(0, 1 - abs(x1))")(0.25)
    0.75
    """
    if not src or not src.strip():
        raise PayoffSyntaxError("empty payoff", 0, frozenset({"number", "variable", "function", "(", "-"}))
    p = _Parser(src)
    root = p.expr()
    if p.tok.kind != "eof":
        p.fail({"+", "-", "*", "end of input"})
    return PayoffExpr(root, -1 if arity is None else arity, src)


def parse_event(src: str) -> EventPredicate:
    """Parse ``"<expr> REL <expr>"`` with REL one of ``< <= >= >``."""
    if not src or not src.strip():
        raise PayoffSyntaxError("empty event", 0)
    p = _Parser(src)
    lhs = p.expr()
    if p.tok.kind != "rel":
        p.fail({"<", "<=", ">=", ">"})
    rel = p.advance().text
    rhs = p.expr()
    if p.tok.kind != "eof":
        p.fail({"+", "-", "*", "end of input"})
    return EventPredicate(PayoffExpr(lhs), rel, PayoffExpr(rhs))


# ---------------------------------------------------------------------------
# evaluation


def _eval(node: Node, cols: np.ndarray, n: int) -> np.ndarray:
    if isinstance(node, Const):
        return np.full(n, node.value)
    if isinstance(node, Var):
        return cols[:, node.index - 1]
    if isinstance(node, Unary):
        a = _eval(node.arg, cols, n)
        if node.op == "neg":
            return -a
        if node.op == "abs":
            return np.abs(a)
        with np.errstate(over="ignore"):
            return np.exp(a)
    if isinstance(node, Binary):
        a = _eval(node.left, cols, n)
        b = _eval(node.right, cols, n)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        return a * b
    if isinstance(node, Pow):
        return np.power(_eval(node.base, cols, n), float(node.exponent))
    if isinstance(node, Extremum):
        fn = np.minimum if node.op == "min" else np.maximum
        out = _eval(node.args[0], cols, n)
        for a in node.args[1:]:
            out = fn(out, _eval(a, cols, n))
        return out
    raise TypeError(f"not a payoff node: {node!r}")


def eval_payoff_batch(expr: PayoffExpr, points) -> np.ndarray:
    """Evaluate ``expr`` at each row of ``points``.

    A 1-D ``points`` array is read as a column of scalar inputs.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise DimensionError(f"points must be 1-D or 2-D, got shape {pts.shape}")
    if pts.shape[1] < expr.arity:
        raise DimensionError(f"payoff needs {expr.arity} coordinates, points have {pts.shape[1]}")
    return _eval(expr.root, pts, pts.shape[0])


def eval_payoff(expr: PayoffExpr, point) -> float:
    # Routed through the batch path so both agree bit-for-bit.
    pt = np.atleast_1d(np.asarray(point, dtype=float))
    if pt.ndim != 1:
        raise DimensionError("point must be a vector")
    if pt.shape[0] < expr.arity:
        raise DimensionError(f"payoff needs {expr.arity} coordinates, point has {pt.shape[0]}")
    return float(_eval(expr.root, pt[None, :], 1)[0])


# ---------------------------------------------------------------------------
# printing

_PREC = {"+": 1, "-": 1, "*": 2}


def _prec(node: Node) -> int:
    if isinstance(node, Binary):
        return _PREC[node.op]
    if isinstance(node, Unary) and node.op == "neg":
        return 3
    if isinstance(node, Const) and node.value < 0:
        return 3
    return 4


def _src(node: Node) -> str:
    if isinstance(node, Const):
        return repr(float(node.value))
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Unary):
        if node.op == "neg":
            inner = _src(node.arg)
            return "-" + (f"({inner})" if _prec(node.arg) < 3 else inner)
        return f"{node.op}({_src(node.arg)})"
    if isinstance(node, Binary):
        p = _PREC[node.op]
        left = _src(node.left)
        right = _src(node.right)
        if _prec(node.left) < p:
            left = f"({left})"
        if _prec(node.right) <= p:
            right = f"({right})"
        return f"{left} {node.op} {right}"
    if isinstance(node, Pow):
        return f"pow({_src(node.base)}, {node.exponent})"
    if isinstance(node, Extremum):
        return f"{node.op}({', '.join(_src(a) for a in node.args)})"
    raise TypeError(f"not a payoff node: {node!r}")


def to_source(expr: PayoffExpr | Node) -> str:
    """Render an AST as source text that parses back to the same tree."""
    return _src(expr.root if isinstance(expr, PayoffExpr) else expr)
