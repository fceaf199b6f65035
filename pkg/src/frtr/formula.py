"""A small spreadsheet formula evaluator.

Grammar::

    formula := ["="] expr
    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := ("-" | "+") unary | primary
    primary := NUMBER | REF | FUNC "(" [arg ("," arg)*] ")" | "(" expr ")"
    arg     := RANGE | REF | expr

References may carry a sheet (``Sheet1!B2``, ``'Q4 Sales'!B2``) and ``$``
markers. Ranges are ``B2:D9`` or whole columns ``D:D``; a whole column
covers the sheet's used rows only. Functions: SUM, AVERAGE, COUNT, MIN, MAX.

Aggregates see only numeric cells of range arguments (text, booleans and
blanks are skipped) plus every scalar argument. SUM and AVERAGE use an
exactly rounded sum (``math.fsum``), so results do not depend on cell order.
MIN and MAX of nothing are 0; AVERAGE of nothing is an error. In arithmetic
a blank cell is 0 and a text cell is an error.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Optional, Union

from .workbook import Cell, Workbook, column_index

__all__ = [
    "FormulaError",
    "UnsupportedFormulaError",
    "MissingSheetError",
    "FormulaZeroDivisionError",
    "EmptyAggregateError",
    "FormulaValueError",
    "CircularReferenceError",
    "FUNCTIONS",
    "eval_formula",
    "parse_formula",
]


class FormulaError(ValueError):
    pass


class UnsupportedFormulaError(FormulaError):
    """Token or function outside the grammar; ``token`` names it."""

    def __init__(self, token: str, message: str = "unsupported token") -> None:
        super().__init__(f"{message}: {token!r}")
        self.token = token


class MissingSheetError(FormulaError):
    def __init__(self, sheet: str) -> None:
        super().__init__(f"reference to missing sheet {sheet!r}")
        self.sheet = sheet


class FormulaZeroDivisionError(FormulaError, ZeroDivisionError):
    pass


class EmptyAggregateError(FormulaError):
    pass


class FormulaValueError(FormulaError):
    pass


class CircularReferenceError(FormulaError):
    pass


_SHEET = r"(?:'(?:[^']|'')+'|[A-Za-z_][A-Za-z0-9_.]*)"
_CELL = r"\$?[A-Za-z]{1,3}\$?[0-9]+"
_COL = r"\$?[A-Za-z]{1,3}"

_TOKEN_RE = re.compile(
    rf"""
    (?P<ws>\s+)
  | (?P<num>(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][+-]?[0-9]+)?)
  | (?P<func>[A-Za-z_][A-Za-z0-9_.]*)\s*\(
  | (?P<range>(?:{_SHEET}!)?{_CELL}:{_CELL})(?![A-Za-z0-9_])
  | (?P<colrange>(?:{_SHEET}!)?{_COL}:{_COL})(?![A-Za-z0-9_])
  | (?P<ref>(?:{_SHEET}!)?{_CELL})(?![A-Za-z0-9_(])
  | (?P<op>[-+*/(),])
    """,
    re.VERBOSE,
)

FUNCTIONS = ("SUM", "AVERAGE", "COUNT", "MIN", "MAX")


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    pos: int


def _tokenize(expr: str) -> list[_Tok]:
    out: list[_Tok] = []
    pos = 0
    while pos < len(expr):
        m = _TOKEN_RE.match(expr, pos)
        if m is None:
            bad = re.match(r"[A-Za-z0-9_.$!']+|.", expr[pos:]).group(0)
            raise UnsupportedFormulaError(bad)
        kind = m.lastgroup
        if kind == "func":
            out.append(_Tok("func", m.group("func"), pos))
            out.append(_Tok("op", "(", m.end() - 1))
        elif kind != "ws":
            out.append(_Tok(kind, m.group(kind), pos))
        pos = m.end()
    return out


def _split_ref(text: str, default_sheet: Optional[str]) -> tuple[Optional[str], str]:
    if "!" not in text:
        return default_sheet, text.replace("$", "")
    sheet, _, ref = text.rpartition("!")
    if sheet.startswith("'"):
        sheet = sheet[1:-1].replace("''", "'")
    return sheet, ref.replace("$", "")


_CELL_PARTS = re.compile(r"([A-Za-z]{1,3})([0-9]+)")


def _cell_coords(ref: str) -> tuple[int, int]:
    m = _CELL_PARTS.fullmatch(ref)
    col = column_index(m.group(1))
    row = int(m.group(2))
    if row < 1:
        raise UnsupportedFormulaError(ref, "row out of range")
    return row, col


# AST nodes are plain tuples:
#   ("num", float) | ("ref", sheet, row, col) | ("range", sheet, r0, c0, r1, c1)
#   ("col", sheet, c0, c1) | ("neg", node) | ("bin", op, a, b) | ("call", name, [args])
Node = tuple


class _Parser:
    def __init__(self, tokens: list[_Tok], default_sheet: Optional[str]) -> None:
        self.toks = tokens
        self.i = 0
        self.default_sheet = default_sheet

    def peek(self) -> Optional[_Tok]:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self) -> _Tok:
        tok = self.peek()
        if tok is None:
            raise UnsupportedFormulaError("<end>", "unexpected end of formula")
        self.i += 1
        return tok

    def expect(self, text: str) -> None:
        tok = self.take()
        if tok.text != text:
            raise UnsupportedFormulaError(tok.text, f"expected {text!r}")

    def parse(self) -> Node:
        node = self.expr()
        tok = self.peek()
        if tok is not None:
            raise UnsupportedFormulaError(tok.text, "unexpected token")
        return node

    def expr(self) -> Node:
        node = self.term()
        while (tok := self.peek()) is not None and tok.text in ("+", "-"):
            self.i += 1
            node = ("bin", tok.text, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while (tok := self.peek()) is not None and tok.text in ("*", "/"):
            self.i += 1
            node = ("bin", tok.text, node, self.unary())
        return node

    def unary(self) -> Node:
        tok = self.peek()
        if tok is not None and tok.text == "-":
            self.i += 1
            return ("neg", self.unary())
        if tok is not None and tok.text == "+":
            self.i += 1
            return self.unary()
        return self.primary()

    def _sheet(self, sheet: Optional[str], tok: _Tok) -> str:
        if sheet is None:
            raise UnsupportedFormulaError(tok.text, "reference without a sheet and no default sheet")
        return sheet

    def _reference(self, tok: _Tok) -> Node:
        sheet, ref = _split_ref(tok.text, self.default_sheet)
        sheet = self._sheet(sheet, tok)
        if tok.kind == "ref":
            row, col = _cell_coords(ref)
            return ("ref", sheet, row, col)
        a, b = ref.split(":")
        if tok.kind == "colrange":
            c0, c1 = sorted((column_index(a), column_index(b)))
            return ("col", sheet, c0, c1)
        (ra, ca), (rb, cb) = _cell_coords(a), _cell_coords(b)
        return ("range", sheet, min(ra, rb), min(ca, cb), max(ra, rb), max(ca, cb))

    def primary(self) -> Node:
        tok = self.take()
        if tok.kind == "num":
            return ("num", float(tok.text))
        if tok.kind == "ref":
            return self._reference(tok)
        if tok.kind in ("range", "colrange"):
            raise UnsupportedFormulaError(tok.text, "range outside a function argument")
        if tok.kind == "func":
            name = tok.text.upper()
            if name not in FUNCTIONS:
                raise UnsupportedFormulaError(tok.text, "unsupported function")
            self.expect("(")
            args: list[Node] = []
            if self.peek() is not None and self.peek().text == ")":
                self.i += 1
                return ("call", name, args)
            while True:
                args.append(self.arg())
                sep = self.take()
                if sep.text == ")":
                    break
                if sep.text != ",":
                    raise UnsupportedFormulaError(sep.text, "expected ',' or ')'")
            return ("call", name, args)
        if tok.text == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise UnsupportedFormulaError(tok.text, "unexpected token")

    def arg(self) -> Node:
        tok = self.peek()
        nxt = self.toks[self.i + 1] if self.i + 1 < len(self.toks) else None
        if tok is not None and tok.kind in ("range", "colrange", "ref") and nxt is not None and nxt.text in (",", ")"):
            self.i += 1
            node = self._reference(tok)
            if node[0] == "ref":
                # a bare reference argument behaves like a one-cell range
                _, sheet, row, col = node
                return ("range", sheet, row, col, row, col)
            return node
        return self.expr()


def parse_formula(expr: str, default_sheet: Optional[str] = None) -> Node:
    """Parse ``expr`` (leading ``=`` optional) into a tuple AST."""
    text = expr.strip()
    if text.startswith("="):
        text = text[1:]
    if not text.strip():
        raise UnsupportedFormulaError(expr, "empty formula")
    return _Parser(_tokenize(text), default_sheet).parse()


Number = float
_Value = Union[None, float, int, str, bool]


class _Evaluator:
    def __init__(self, wb: Workbook) -> None:
        self.wb = wb
        self.memo: dict[tuple[str, int, int], _Value] = {}
        self.active: set[tuple[str, int, int]] = set()

    def sheet(self, name: str):
        try:
            return self.wb.sheet(name)
        except KeyError:
            raise MissingSheetError(name) from None

    def cell_value(self, sheet_name: str, row: int, col: int) -> _Value:
        sheet = self.sheet(sheet_name)
        cell: Optional[Cell] = sheet.cells.get((row, col))
        if cell is None:
            return None
        if cell.formula is None or cell.value not in (None, ""):
            return cell.value
        key = (sheet.name, row, col)
        if key in self.memo:
            return self.memo[key]
        if key in self.active:
            raise CircularReferenceError(f"circular reference through {sheet.name}!{col}:{row}")
        self.active.add(key)
        try:
            value = self.eval(parse_formula(cell.formula, sheet.name))
        finally:
            self.active.discard(key)
        self.memo[key] = value
        return value

    def range_numbers(self, sheet_name: str, r0: int, c0: int, r1: int, c1: int) -> list[float]:
        sheet = self.sheet(sheet_name)
        area = (r1 - r0 + 1) * (c1 - c0 + 1)
        if area > len(sheet.cells):
            coords = [(r, c) for (r, c) in sheet.cells if r0 <= r <= r1 and c0 <= c <= c1]
        else:
            coords = [(r, c) for r in range(r0, r1 + 1) for c in range(c0, c1 + 1) if (r, c) in sheet.cells]
        out = []
        for r, c in coords:
            v = self.cell_value(sheet.name, r, c)
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                out.append(float(v))
        return out

    def arg_numbers(self, node: Node) -> list[float]:
        kind = node[0]
        if kind == "range":
            return self.range_numbers(*node[1:])
        if kind == "col":
            _, sheet_name, c0, c1 = node
            used = self.sheet(sheet_name).used_range
            if used is None:
                return []
            return self.range_numbers(sheet_name, used[1], c0, used[3], c1)
        return [self.eval(node)]

    def eval(self, node: Node) -> float:
        kind = node[0]
        if kind == "num":
            return node[1]
        if kind == "ref":
            v = self.cell_value(node[1], node[2], node[3])
            if v is None or v == "":
                return 0.0
            if isinstance(v, bool):
                return 1.0 if v else 0.0
            if isinstance(v, (int, float)):
                return float(v)
            raise FormulaValueError(f"text value {v!r} used as a number")
        if kind == "neg":
            return -self.eval(node[1])
        if kind == "bin":
            a, b = self.eval(node[2]), self.eval(node[3])
            op = node[1]
            if op == "+":
                return a + b
            if op == "-":
                return a - b
            if op == "*":
                return a * b
            if b == 0:
                raise FormulaZeroDivisionError("division by zero")
            return a / b
        if kind == "call":
            values: list[float] = []
            for arg in node[2]:
                values.extend(self.arg_numbers(arg))
            return _AGGREGATES[node[1]](values)
        raise UnsupportedFormulaError(str(kind), "unexpected node")


def _average(values: list[float]) -> float:
    if not values:
        raise EmptyAggregateError("AVERAGE over no numeric cells")
    return math.fsum(values) / len(values)


_AGGREGATES: dict[str, Callable[[list[float]], float]] = {
    "SUM": math.fsum,
    "AVERAGE": _average,
    "COUNT": lambda v: float(len(v)),
    "MIN": lambda v: min(v) if v else 0.0,
    "MAX": lambda v: max(v) if v else 0.0,
}


def eval_formula(expr: str, wb: Workbook, default_sheet: Optional[str] = None) -> float:
    """Evaluate ``expr`` over ``wb``; unqualified references use ``default_sheet``.

    Formula cells contribute their cached value when the file stored one,
    otherwise they are evaluated recursively.
    """
    return _Evaluator(wb).eval(parse_formula(expr, default_sheet))
