"""Tiny arithmetic expression language for kernels and observables.

Grammar (standard precedence, ``^`` binds tightest and is
right-associative with a literal integer exponent)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' INT)?
    atom   := NUMBER | NAME | '(' expr ')'

Only the variable names handed to :func:`parse_expression` are legal;
division by zero is left as a runtime evaluation error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class ExprSyntaxError(ValueError):
    """Malformed expression; carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class ExprEvalError(ArithmeticError):
    """Runtime failure while evaluating (division by zero)."""


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str  # '+', '-', '*', '/'
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: int


Node = Num | Var | Neg | BinOp | Pow

_TOKEN_CHARS = set("+-*/^()")


@dataclass(frozen=True)
class _Token:
    kind: str  # 'num' | 'name' | 'op'
    text: str
    offset: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in _TOKEN_CHARS:
            tokens.append(_Token("op", ch, i))
            i += 1
            continue
        if ch.isdigit() or ch == ".":
            j = i
            seen_dot = False
            while j < len(text) and (text[j].isdigit() or (text[j] == "." and not seen_dot)):
                seen_dot = seen_dot or text[j] == "."
                j += 1
            tokens.append(_Token("num", text[i:j], i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < len(text) and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(_Token("name", text[i:j], i))
            i = j
            continue
        raise ExprSyntaxError(f"unexpected character {ch!r}", i)
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token], variables: Sequence[str], length: int):
        self.tokens = tokens
        self.pos = 0
        self.variables = set(variables)
        self.length = length

    def _peek(self) -> _Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _offset(self) -> int:
        tok = self._peek()
        return tok.offset if tok else self.length

    def _accept(self, text: str) -> bool:
        tok = self._peek()
        if tok and tok.kind == "op" and tok.text == text:
            self.pos += 1
            return True
        return False

    def parse(self) -> Node:
        node = self.expr()
        if self.pos != len(self.tokens):
            raise ExprSyntaxError("trailing input", self._offset())
        return node

    def expr(self) -> Node:
        node = self.term()
        while True:
            if self._accept("+"):
                node = BinOp("+", node, self.term())
            elif self._accept("-"):
                node = BinOp("-", node, self.term())
            else:
                return node

    def term(self) -> Node:
        node = self.unary()
        while True:
            if self._accept("*"):
                node = BinOp("*", node, self.unary())
            elif self._accept("/"):
                node = BinOp("/", node, self.unary())
            else:
                return node

    def unary(self) -> Node:
        if self._accept("-"):
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self._accept("^"):
            tok = self._peek()
            if tok is None or tok.kind != "num" or "." in tok.text:
                raise ExprSyntaxError("exponent must be an integer literal", self._offset())
            self.pos += 1
            return Pow(base, int(tok.text))
        return base

    def atom(self) -> Node:
        tok = self._peek()
        if tok is None:
            raise ExprSyntaxError("unexpected end of expression", self._offset())
        if tok.kind == "num":
            self.pos += 1
            return Num(float(tok.text))
        if tok.kind == "name":
            if tok.text not in self.variables:
                raise ExprSyntaxError(f"unknown identifier {tok.text!r}", tok.offset)
            self.pos += 1
            return Var(tok.text)
        if self._accept("("):
            node = self.expr()
            if not self._accept(")"):
                raise ExprSyntaxError("missing closing parenthesis", self._offset())
            return node
        raise ExprSyntaxError(f"unexpected token {tok.text!r}", tok.offset)


def parse_expression(text: str, variables: Sequence[str] = ("x",)) -> Node:
    """Parse ``text`` into an AST over the given variable names."""
    return _Parser(_tokenize(text), variables, len(text)).parse()


def evaluate(node: Node, **values: np.ndarray) -> np.ndarray:
    """Evaluate an AST; array arguments broadcast through."""
    if isinstance(node, Num):
        return np.asarray(node.value)
    if isinstance(node, Var):
        return np.asarray(values[node.name])
    if isinstance(node, Neg):
        return -evaluate(node.operand, **values)
    if isinstance(node, Pow):
        return evaluate(node.base, **values) ** node.exponent
    left = evaluate(node.left, **values)
    right = evaluate(node.right, **values)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    with np.errstate(divide="raise", invalid="raise"):
        try:
            return left / right
        except FloatingPointError as exc:
            raise ExprEvalError("division by zero") from exc


def pretty(node: Node) -> str:
    """Fully parenthesized rendering; re-parsing it reproduces the AST."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{pretty(node.operand)})"
    if isinstance(node, Pow):
        return f"({pretty(node.base)}^{node.exponent})"
    return f"({pretty(node.left)}{node.op}{pretty(node.right)})"


@dataclass(frozen=True)
class ExpressionFunction:
    """Picklable single-variable callable wrapping a parsed expression."""

    text: str
    variable: str = "x"

    def __post_init__(self) -> None:
        object.__setattr__(self, "_node", parse_expression(self.text, (self.variable,)))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        out = evaluate(self._node, **{self.variable: np.asarray(x, dtype=float)})
        return np.broadcast_to(out, np.shape(x)).astype(float)


@dataclass(frozen=True)
class ExpressionDensity:
    """Picklable bivariate callable for kernel densities in ``x`` and ``y``."""

    text: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "_node", parse_expression(self.text, ("x", "y")))

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        out = evaluate(self._node, x=np.asarray(x, dtype=float), y=np.asarray(y, dtype=float))
        return np.broadcast_to(out, np.broadcast_shapes(np.shape(x), np.shape(y)))
