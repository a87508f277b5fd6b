"""Straight-line assignment language used by program-style rationales.

Grammar (see docs/potlang.md):

    program    := line*
    line       := assignment | comment | blank
    assignment := IDENT "=" expr
    expr       := term (("+" | "-") term)*
    term       := factor (("*" | "/") factor)*
    factor     := "-" factor | NUMBER | IDENT | "(" expr ")"

No control flow, no calls. Reassignment is allowed; the last binding wins.
Evaluation is exact (rational arithmetic). The program's result is whatever
the variable `answer` holds after the final statement.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from typing import Optional, Union

from .core import SikedError

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
NUMBER_RE = re.compile(r"(?:\d+\.\d*|\.\d+|\d+)")

ANSWER_VAR = "answer"


class ParseError(SikedError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class EvalError(SikedError):
    pass


@dataclass(frozen=True)
class Num:
    value: Fraction

    def render(self) -> str:
        if self.value.denominator == 1:
            return str(self.value.numerator)
        return str(Decimal(self.value.numerator) / Decimal(self.value.denominator))


@dataclass(frozen=True)
class Var:
    name: str

    def render(self) -> str:
        return self.name


@dataclass(frozen=True)
class Neg:
    operand: "Expr"

    def render(self) -> str:
        return f"-{_render_operand(self.operand)}"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Expr"
    right: "Expr"

    def render(self) -> str:
        return f"({self.left.render()} {self.op} {self.right.render()})"


Expr = Union[Num, Var, Neg, BinOp]


def _render_operand(expr: Expr) -> str:
    if isinstance(expr, (Num, Var)):
        return expr.render()
    return f"({expr.render()})"


@dataclass(frozen=True)
class Assignment:
    name: str
    expr: Expr

    def render(self) -> str:
        return f"{self.name} = {self.expr.render()}"


@dataclass(frozen=True)
class Program:
    statements: tuple[Assignment, ...]
    trailing_junk: tuple[str, ...] = ()  # tolerated prose after the last assignment

    def render(self) -> str:
        return "\n".join(stmt.render() for stmt in self.statements)


@dataclass(frozen=True)
class Valuation:
    bindings: dict[str, Fraction]
    final_answer: Optional[Fraction]


class _LineParser:
    """Recursive-descent parser over a single assignment line."""

    def __init__(self, text: str, lineno: int):
        self.text = text
        self.lineno = lineno
        self.pos = 0

    def error(self, message: str) -> ParseError:
        return ParseError(message, self.lineno, self.pos + 1)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos] in " \t":
            self.pos += 1

    def at_end(self) -> bool:
        self.skip_ws()
        return self.pos >= len(self.text)

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, char: str):
        if self.peek() != char:
            raise self.error(f"expected {char!r}")
        self.pos += 1

    def parse_assignment(self) -> Assignment:
        self.skip_ws()
        match = IDENT_RE.match(self.text, self.pos)
        if not match:
            raise self.error("expected identifier")
        name = match.group()
        self.pos = match.end()
        self.expect("=")
        expr = self.parse_expr()
        if not self.at_end():
            raise self.error("unexpected trailing characters")
        return Assignment(name, expr)

    def parse_expr(self) -> Expr:
        node = self.parse_term()
        while self.peek() and self.peek() in "+-":
            op = self.peek()
            self.pos += 1
            node = BinOp(op, node, self.parse_term())
        return node

    def parse_term(self) -> Expr:
        node = self.parse_factor()
        while self.peek() and self.peek() in "*/":
            op = self.peek()
            self.pos += 1
            node = BinOp(op, node, self.parse_factor())
        return node

    def parse_factor(self) -> Expr:
        ch = self.peek()
        if ch == "-":
            self.pos += 1
            return Neg(self.parse_factor())
        if ch == "(":
            self.pos += 1
            inner = self.parse_expr()
            self.expect(")")
            return inner
        self.skip_ws()
        match = NUMBER_RE.match(self.text, self.pos)
        if match:
            self.pos = match.end()
            return Num(Fraction(Decimal(match.group())))
        match = IDENT_RE.match(self.text, self.pos)
        if match:
            self.pos = match.end()
            return Var(match.group())
        raise self.error("expected number, identifier, or parenthesized expression")


def _looks_like_assignment(line: str) -> bool:
    """True when a line starts `ident =` and is not a comparison like `==`."""
    match = IDENT_RE.match(line.lstrip())
    if not match:
        return False
    rest = line.lstrip()[match.end():].lstrip()
    return rest.startswith("=") and not rest.startswith("==")


def parse_program(text: str) -> Program:
    """Parse program text into an AST.

    Comment lines (leading #) and blank lines are skipped. Non-assignment
    lines after at least one assignment are tolerated as trailing junk
    (models often append prose); before any assignment they are an error.
    Once junk begins, later assignment-looking lines are junk too.
    """
    statements: list[Assignment] = []
    junk: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if junk:
            junk.append(raw)
            continue
        if _looks_like_assignment(raw):
            statements.append(_LineParser(raw, lineno).parse_assignment())
        elif statements:
            junk.append(raw)
        else:
            parser = _LineParser(raw, lineno)
            raise parser.error("expected an assignment statement")
    return Program(tuple(statements), tuple(junk))


def _eval_expr(expr: Expr, env: dict[str, Fraction]) -> Fraction:
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Var):
        if expr.name not in env:
            raise EvalError(f"use of unbound identifier: {expr.name}")
        return env[expr.name]
    if isinstance(expr, Neg):
        return -_eval_expr(expr.operand, env)
    left = _eval_expr(expr.left, env)
    right = _eval_expr(expr.right, env)
    if expr.op == "+":
        return left + right
    if expr.op == "-":
        return left - right
    if expr.op == "*":
        return left * right
    if right == 0:
        raise EvalError("division by zero")
    return left / right


def eval_program(program: Program) -> Valuation:
    """Evaluate statements top to bottom with exact rational arithmetic."""
    env: dict[str, Fraction] = {}
    for stmt in program.statements:
        env[stmt.name] = _eval_expr(stmt.expr, env)
    final = env.get(ANSWER_VAR)
    return Valuation(env, final)


def run_program(text: str) -> Fraction:
    """Parse and evaluate; the `answer` variable must be bound."""
    valuation = eval_program(parse_program(text))
    if valuation.final_answer is None:
        raise EvalError(f"program never binds {ANSWER_VAR!r}")
    return valuation.final_answer


def fraction_to_decimal(value: Fraction, digits: int = 12) -> Decimal:
    """Decimal rendering with at least `digits` significant digits."""
    if value.denominator == 1:
        return Decimal(value.numerator)
    quotient = Decimal(value.numerator) / Decimal(value.denominator)
    return +quotient  # rounds to current context precision (28 digits default)
