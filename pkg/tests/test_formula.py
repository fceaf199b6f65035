import random

import pytest

from frtr.formula import (
    CircularReferenceError,
    EmptyAggregateError,
    FormulaValueError,
    FormulaZeroDivisionError,
    MissingSheetError,
    UnsupportedFormulaError,
    eval_formula,
    parse_formula,
)
from frtr.workbook import Cell, CellAddress, Sheet, Workbook, column_letter

from conftest import make_workbook
from oracles import NaiveFormula, OracleError


def test_sum_simple():
    wb = make_workbook({"Sheet1": [["h"], [1], [2], [3]]})
    assert eval_formula("SUM(B2:B4)", make_workbook({"Sheet1": [["h", "h"], [0, 1], [0, 2], [0, 3]]}), "Sheet1") == 6
    assert eval_formula("=SUM(A2:A4)", wb, "Sheet1") == 6


def test_cross_sheet_sum():
    wb = make_workbook({"Sheet1": [[None], [None, 1], [None, 2]], "Sheet2": [[None]] * 4 + [[None, None, 4]]})
    assert eval_formula("SUM(Sheet1!B2:B3, Sheet2!C5)", wb) == 7


def test_average_of_empty_range():
    wb = make_workbook({"S": [["x"]]})
    with pytest.raises(EmptyAggregateError):
        eval_formula("AVERAGE(B1:B9)", wb, "S")


def test_aggregate_conventions():
    wb = make_workbook({"S": [[1, "t", None, True, 4]]})
    assert eval_formula("SUM(A1:E1)", wb, "S") == 5
    assert eval_formula("COUNT(A1:E1)", wb, "S") == 2
    assert eval_formula("AVERAGE(A1:E1)", wb, "S") == 2.5
    assert eval_formula("MIN(A1:E1)", wb, "S") == 1
    assert eval_formula("MAX(A1:E1, 9)", wb, "S") == 9
    assert eval_formula("MAX(C1:C1)", wb, "S") == 0


def test_whole_column_uses_used_rows():
    wb = make_workbook({"S": [["h", "h"], [1, 10], [2, 20], [3, 30]]})
    assert eval_formula("SUM(D:D)", wb, "S") == 0
    assert eval_formula("SUM(A:B)", wb, "S") == 66
    assert eval_formula("SUM(S!$B:$B)", wb) == 60


def test_quoted_sheet_and_absolute_refs():
    wb = Workbook("w", (Sheet.from_cells("Q4 Sales", [Cell(CellAddress("Q4 Sales", 2, 2), 5)]),))
    assert eval_formula("'Q4 Sales'!$B$2*2", wb) == 10


def test_arithmetic_precedence_and_unary():
    wb = make_workbook({"S": [[2, 3]]})
    assert eval_formula("1+2*3-4/2", wb, "S") == 5
    assert eval_formula("-(A1+B1)*-2", wb, "S") == 10
    assert eval_formula("+A1--B1", wb, "S") == 5
    assert eval_formula("Z99+1", wb, "S") == 1


def test_formula_cells_evaluated_recursively():
    s = Sheet.from_cells(
        "S",
        [Cell(CellAddress("S", 1, 1), 2), Cell(CellAddress("S", 1, 2), None, "A1*10"), Cell(CellAddress("S", 1, 3), 99, "A1")],
    )
    wb = Workbook("w", (s,))
    assert eval_formula("A2+A3", wb, "S") == 119


def test_circular_reference():
    s = Sheet.from_cells("S", [Cell(CellAddress("S", 1, 1), None, "A2"), Cell(CellAddress("S", 1, 2), None, "A1+1")])
    with pytest.raises(CircularReferenceError):
        eval_formula("A1", Workbook("w", (s,)), "S")


def test_errors():
    wb = make_workbook({"S": [["text", 0]]})
    with pytest.raises(UnsupportedFormulaError) as ei:
        eval_formula("VLOOKUP(A1, B1:C2, 2)", wb, "S")
    assert "VLOOKUP" in str(ei.value)
    with pytest.raises(UnsupportedFormulaError):
        eval_formula("A1 & B1", wb, "S")
    with pytest.raises(MissingSheetError):
        eval_formula("Nope!A1", wb, "S")
    with pytest.raises(FormulaZeroDivisionError):
        eval_formula("1/B1", wb, "S")
    with pytest.raises(FormulaValueError):
        eval_formula("A1+1", wb, "S")
    with pytest.raises(UnsupportedFormulaError):
        eval_formula("SUM(A1", wb, "S")


def test_parse_shapes():
    assert parse_formula("=A1", "S") == ("ref", "S", 1, 1)
    assert parse_formula("SUM(T!B2:C3)", "S") == ("call", "SUM", [("range", "T", 2, 2, 3, 3)])
    assert parse_formula("SUM(D:D)", "S") == ("call", "SUM", [("col", "S", 4, 4)])


# -- differential test against the naive interpreter --------------------------------

SHEETS = ("S1", "S2")
ROWS, COLS = 6, 4


def random_grid(rng):
    grid = {}
    for name in SHEETS:
        cells = {}
        for r in range(1, ROWS + 1):
            for c in range(1, COLS + 1):
                x = rng.random()
                if x < 0.45:
                    cells[(r, c)] = rng.randint(-20, 20)
                elif x < 0.7:
                    cells[(r, c)] = round(rng.uniform(-100, 100), 2)
                elif x < 0.75:
                    cells[(r, c)] = rng.choice(["abc", "n/a"])
                elif x < 0.8:
                    cells[(r, c)] = rng.random() < 0.5
        grid[name] = cells
    return grid


def grid_workbook(grid):
    sheets = tuple(
        Sheet.from_cells(n, [Cell(CellAddress(n, c, r), v) for (r, c), v in cells.items()]) for n, cells in grid.items()
    )
    return Workbook("rand", sheets)


def _cell(rng):
    ref = f"{column_letter(rng.randint(1, COLS + 1))}{rng.randint(1, ROWS + 1)}"
    return (rng.choice(SHEETS) + "!" + ref) if rng.random() < 0.3 else ref


def _range(rng):
    sheet = (rng.choice(SHEETS) + "!") if rng.random() < 0.3 else ""
    if rng.random() < 0.15:
        a, b = column_letter(rng.randint(1, COLS)), column_letter(rng.randint(1, COLS))
        return f"{sheet}{a}:{b}"
    a = f"{column_letter(rng.randint(1, COLS))}{rng.randint(1, ROWS)}"
    b = f"{column_letter(rng.randint(1, COLS))}{rng.randint(1, ROWS)}"
    return f"{sheet}{a}:{b}"


def random_expr(rng, depth=0):
    x = rng.random()
    if depth > 3 or x < 0.25:
        return rng.choice([str(rng.randint(0, 50)), f"{rng.randint(0, 99)}.{rng.randint(0, 99):02d}", _cell(rng)])
    if x < 0.5:
        name = rng.choice(["SUM", "AVERAGE", "COUNT", "MIN", "MAX"])
        args = [rng.choice([_range, _cell, lambda g: random_expr(g, depth + 1)])(rng) for _ in range(rng.randint(1, 3))]
        return f"{name}({', '.join(args)})"
    if x < 0.6:
        return "-" + random_expr(rng, depth + 1)
    if x < 0.7:
        return "(" + random_expr(rng, depth + 1) + ")"
    op = rng.choice(["+", "-", "*", "/"])
    space = " " if rng.random() < 0.5 else ""
    return f"{random_expr(rng, depth + 1)}{space}{op}{space}{random_expr(rng, depth + 1)}"


_KINDS = {FormulaZeroDivisionError: "div0", EmptyAggregateError: "empty", FormulaValueError: "value"}


def outcome_impl(expr, wb):
    try:
        return ("ok", eval_formula(expr, wb, "S1"))
    except (FormulaZeroDivisionError, EmptyAggregateError, FormulaValueError) as exc:
        return ("err", _KINDS[type(exc)])


def outcome_oracle(expr, grid):
    try:
        return ("ok", NaiveFormula(grid, "S1").run(expr))
    except OracleError as exc:
        return ("err", exc.kind)


def differential(n_exprs: int, seed: int) -> tuple[int, int]:
    """Returns (agreements, numeric results) over ``n_exprs`` random expressions."""
    rng = random.Random(seed)
    agree = numeric = 0
    grid = wb = None
    for i in range(n_exprs):
        if i % 25 == 0:
            grid = random_grid(rng)
            wb = grid_workbook(grid)
        expr = random_expr(rng)
        got, want = outcome_impl(expr, wb), outcome_oracle(expr, grid)
        assert got == want, expr
        agree += 1
        numeric += got[0] == "ok"
    return agree, numeric


def test_matches_naive_interpreter_small():
    agree, numeric = differential(300, seed=11)
    assert agree == 300 and numeric > 150
