"""Parser and evaluator for bra-ket style operator expressions.

Expressions combine matrix-valued atoms (``|i><j|_D``, ``Id_D``, Pauli
matrices, bosonic ladder operators) and physical constants into complex
matrices.  The same small language is used for Hamiltonians, observables,
initial states and scalar parameters in configuration files.

Grammar (loosest to tightest binding)::

    expr   :=  term   (('+'|'-') term)*
    term   :=  factor ('otimes' factor)*
    factor :=  unary  (('*'|'/') unary)*
    unary  :=  '-' unary | 'sqrt' '(' expr ')' | 'exp' '(' expr ')' | atom
    atom   :=  number | constant | dirac | predefined | '(' expr ')'

so ``otimes`` binds more loosely than ``*``/``/`` and more tightly than
``+``/``-``; unary minus binds tightest.
"""

from __future__ import annotations

import cmath
import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "ExpressionError",
    "constants",
    "parse_expression",
    "evaluate",
    "format_expression",
    "matrix_from_expression",
    "scalar_from_expression",
]


class ExpressionError(ValueError):
    """Raised on lexing, parsing or evaluation failure.

    Carries the character offset of the offending token in ``pos``.
    """

    def __init__(self, message: str, pos: int | None = None):
        if pos is not None:
            message = f"{message} (at offset {pos})"
        super().__init__(message)
        self.pos = pos


#: Physical constants available inside expressions.  Energies are meV,
#: times ps, temperatures K; ``wn`` converts wavenumbers (1/cm) to
#: angular frequencies (1/ps).
constants = {
    "pi": math.pi,
    "hbar": 0.6582119569,          # meV ps
    "kB": 0.08617333262,           # meV/K
    "wn": 2.0 * math.pi * 0.0299792458,  # cm/ps
}

HBAR = constants["hbar"]
KB = constants["kB"]


# ---------------------------------------------------------------------------
# lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<dirac>\|(?P<ket>\d+)><(?P<bra>\d+)\|_(?P<ddim>\d+))
  | (?P<number>\d+(\.\d*)?([eE][+-]?\d+)?|\.\d+([eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z][A-Za-z0-9_]*)
  | (?P<op>[-+*/()])
    """,
    re.VERBOSE,
)

_PREDEF_RE = re.compile(r"^(Id|bdagger|b|n)_(\d+)$")


@dataclass
class _Token:
    kind: str
    value: object
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExpressionError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            kind = m.lastgroup
            if kind == "dirac":
                value = (int(m.group("ket")), int(m.group("bra")), int(m.group("ddim")))
            elif kind == "number":
                value = float(m.group())
            else:
                value = m.group()
            tokens.append(_Token(kind, value, pos))
        pos = m.end()
    tokens.append(_Token("end", None, len(text)))
    return tokens


# ---------------------------------------------------------------------------
# parser: produces a small tuple-based AST
#   ('num', x) ('const', name) ('dirac', i, j, D) ('pauli', axis)
#   ('Id'|'bdagger'|'b'|'n', D) ('neg', a) ('sqrt'|'exp', a)
#   ('+'|'-'|'*'|'/'|'otimes', a, b)

Ast = tuple


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def next(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str):
        tok = self.next()
        if tok.kind != "op" or tok.value != op:
            raise ExpressionError(f"expected {op!r}", tok.pos)

    def parse(self) -> Ast:
        node = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ExpressionError(f"trailing input {tok.value!r}", tok.pos)
        return node

    def expr(self) -> Ast:
        node = self.term()
        while self.peek().kind == "op" and self.peek().value in "+-":
            op = self.next().value
            node = (op, node, self.term())
        return node

    def term(self) -> Ast:
        node = self.factor()
        while self.peek().kind == "ident" and self.peek().value == "otimes":
            self.next()
            node = ("otimes", node, self.factor())
        return node

    def factor(self) -> Ast:
        node = self.unary()
        while self.peek().kind == "op" and self.peek().value in "*/":
            op = self.next().value
            node = (op, node, self.unary())
        return node

    def unary(self) -> Ast:
        tok = self.peek()
        if tok.kind == "op" and tok.value == "-":
            self.next()
            return ("neg", self.unary())
        if tok.kind == "ident" and tok.value in ("sqrt", "exp"):
            self.next()
            self.expect_op("(")
            inner = self.expr()
            self.expect_op(")")
            return (tok.value, inner)
        return self.atom()

    def atom(self) -> Ast:
        tok = self.next()
        if tok.kind == "number":
            return ("num", tok.value)
        if tok.kind == "dirac":
            i, j, dim = tok.value
            if i >= dim or j >= dim:
                raise ExpressionError(
                    f"|{i}><{j}|_{dim}: index out of range", tok.pos)
            return ("dirac", i, j, dim)
        if tok.kind == "ident":
            name = tok.value
            if name in constants:
                return ("const", name)
            if name in ("sigma_x", "sigma_y", "sigma_z"):
                return ("pauli", name[-1])
            m = _PREDEF_RE.match(name)
            if m:
                dim = int(m.group(2))
                if dim < 1:
                    raise ExpressionError(f"{name}: dimension must be >= 1", tok.pos)
                return (m.group(1), dim)
            raise ExpressionError(f"unknown identifier {name!r}", tok.pos)
        if tok.kind == "op" and tok.value == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ExpressionError("expected an operand", tok.pos)


def parse_expression(text: str) -> Ast:
    """Parse ``text`` into an AST; raises ExpressionError with an offset."""
    return _Parser(_tokenize(text)).parse()


# ---------------------------------------------------------------------------
# evaluation

_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def _scalar(value: complex) -> np.ndarray:
    return np.array([[value]], dtype=complex)


def _is_scalar(mat: np.ndarray) -> bool:
    return mat.shape == (1, 1)


def evaluate(node: Ast) -> np.ndarray:
    """Evaluate an AST to a complex matrix (scalars are 1x1 matrices)."""
    head = node[0]
    if head == "num":
        return _scalar(node[1])
    if head == "const":
        return _scalar(constants[node[1]])
    if head == "dirac":
        i, j, dim = node[1], node[2], node[3]
        mat = np.zeros((dim, dim), dtype=complex)
        mat[i, j] = 1.0
        return mat
    if head == "pauli":
        return _PAULI[node[1]].copy()
    if head == "Id":
        return np.eye(node[1], dtype=complex)
    if head == "bdagger":
        dim = node[1]
        mat = np.zeros((dim, dim), dtype=complex)
        for k in range(dim - 1):
            mat[k + 1, k] = math.sqrt(k + 1)
        return mat
    if head == "b":
        dim = node[1]
        mat = np.zeros((dim, dim), dtype=complex)
        for k in range(dim - 1):
            mat[k, k + 1] = math.sqrt(k + 1)
        return mat
    if head == "n":
        return np.diag(np.arange(node[1], dtype=complex))
    if head == "neg":
        return -evaluate(node[1])
    if head in ("sqrt", "exp"):
        arg = evaluate(node[1])
        if not _is_scalar(arg):
            raise ExpressionError(f"{head}() requires a scalar argument")
        fn = cmath.sqrt if head == "sqrt" else cmath.exp
        return _scalar(fn(arg[0, 0]))

    a = evaluate(node[1])
    b = evaluate(node[2])
    if head in ("+", "-"):
        if a.shape != b.shape:
            raise ExpressionError(
                f"shape mismatch for {head!r}: {a.shape} vs {b.shape}")
        return a + b if head == "+" else a - b
    if head == "*":
        if _is_scalar(a):
            return a[0, 0] * b
        if _is_scalar(b):
            return b[0, 0] * a
        if a.shape[1] != b.shape[0]:
            raise ExpressionError(
                f"shape mismatch for product: {a.shape} vs {b.shape}")
        return a @ b
    if head == "/":
        if not _is_scalar(b):
            raise ExpressionError("division requires a scalar divisor")
        if b[0, 0] == 0:
            raise ExpressionError("division by zero")
        return a / b[0, 0]
    if head == "otimes":
        return np.kron(a, b)
    raise ExpressionError(f"unknown node {head!r}")


def format_expression(node: Ast) -> str:
    """Pretty-print an AST; output re-parses to an equivalent expression."""
    head = node[0]
    if head == "num":
        return repr(node[1])
    if head == "const":
        return node[1]
    if head == "dirac":
        return f"|{node[1]}><{node[2]}|_{node[3]}"
    if head == "pauli":
        return f"sigma_{node[1]}"
    if head in ("Id", "bdagger", "b", "n"):
        return f"{head}_{node[1]}"
    if head == "neg":
        return f"(-{format_expression(node[1])})"
    if head in ("sqrt", "exp"):
        return f"{head}({format_expression(node[1])})"
    a, b = format_expression(node[1]), format_expression(node[2])
    op = " otimes " if head == "otimes" else f" {head} "
    return f"({a}{op}{b})"


def matrix_from_expression(text: str) -> np.ndarray:
    """Parse and evaluate ``text`` to a complex matrix."""
    return evaluate(parse_expression(text))


def scalar_from_expression(text: str) -> float:
    """Evaluate ``text``; require a 1x1 result and return its real part."""
    mat = matrix_from_expression(text)
    if not _is_scalar(mat):
        raise ExpressionError(f"expected a scalar, got shape {mat.shape}")
    return float(mat[0, 0].real)
