import pytest
from hypothesis import given
from hypothesis import strategies as st

from frtr.workbook import (
    A1ParseError,
    Cell,
    CellAddress,
    ImageAsset,
    Sheet,
    Workbook,
    column_index,
    column_letter,
    parse_a1,
    parse_range,
    render_a1,
)

from conftest import make_sheet


@pytest.mark.parametrize(
    "text, ctx, expected",
    [
        ("Sheet1!B5", None, ("Sheet1", 2, 5)),
        ("AA10", "S", ("S", 27, 10)),
        ("Consolidation!E47", None, ("Consolidation", 5, 47)),
        ("'Q4 Sales'!$C$3", None, ("Q4 Sales", 3, 3)),
        ("b7", "S", ("S", 2, 7)),
    ],
)
def test_parse_a1_examples(text, ctx, expected):
    a = parse_a1(text, ctx)
    assert (a.sheet, a.column, a.row) == expected


@pytest.mark.parametrize(
    "addr, with_sheet, expected",
    [
        (CellAddress("Sheet1", 2, 5), True, "Sheet1!B5"),
        (CellAddress("S", 27, 10), False, "AA10"),
        (CellAddress("EMEA_Sales", 4, 1), True, "EMEA_Sales!D1"),
        (CellAddress("Q4 Sales", 1, 1), True, "'Q4 Sales'!A1"),
    ],
)
def test_render_a1_examples(addr, with_sheet, expected):
    assert render_a1(addr, with_sheet=with_sheet) == expected


@pytest.mark.parametrize("col, letters", [(1, "A"), (26, "Z"), (27, "AA"), (52, "AZ"), (703, "AAA"), (16384, "XFD")])
def test_column_letters(col, letters):
    assert column_letter(col) == letters
    assert column_index(letters) == col


@pytest.mark.parametrize("bad", ["", "B", "5", "Sheet1!", "B0", "A1B", "XFE1", "A1048577", "!A1"])
def test_parse_a1_rejects_malformed(bad):
    with pytest.raises(A1ParseError):
        parse_a1(bad, "S")


def test_parse_a1_without_context_sheet_fails():
    with pytest.raises(A1ParseError):
        parse_a1("B5")


def test_parse_error_names_token():
    with pytest.raises(A1ParseError, match="A1B"):
        parse_a1("Sheet1!A1B")


@given(
    col=st.integers(1, 16384),
    row=st.integers(1, 1048576),
    sheet=st.sampled_from(["S", "Sheet1", "EMEA_Sales", "Q4 Sales", "it's", "Data.2024"]),
)
def test_render_parse_round_trip(col, row, sheet):
    addr = CellAddress(sheet, col, row)
    assert parse_a1(render_a1(addr, with_sheet=True)) == addr
    assert parse_a1(render_a1(addr), sheet) == addr


@given(col=st.integers(1, 16384), row=st.integers(1, 1048576))
def test_lowercase_letters_normalize(col, row):
    text = render_a1(CellAddress("S", col, row)).lower()
    assert render_a1(parse_a1(text, "S")) == text.upper()


def test_address_invariants():
    with pytest.raises(ValueError):
        CellAddress("S", 0, 1)
    with pytest.raises(ValueError):
        CellAddress("S", 1, 0)
    with pytest.raises(ValueError):
        CellAddress("", 1, 1)


def test_parse_range_normalizes_corners():
    r = parse_range("Sheet2!C50:C5")
    assert (r.sheet, r.min_col, r.min_row, r.max_col, r.max_row) == ("Sheet2", 3, 5, 3, 50)
    assert r.n_cells == 46
    assert r.contains(CellAddress("Sheet2", 3, 20))
    assert not r.contains(CellAddress("Sheet1", 3, 20))


def test_sheet_used_range_is_tight_box():
    s = make_sheet("S", [[None, None, None], [None, "x", None], [None, None, 5]])
    assert s.used_range == (2, 2, 3, 3)
    for (r, c), cell in s.cells.items():
        assert 2 <= c <= 3 and 2 <= r <= 3
        assert not cell.is_empty


def test_empty_sheet_sentinel():
    assert Sheet.from_cells("E", []).used_range is None


def test_sparse_map_drops_empty_cells():
    cells = [Cell(CellAddress("S", 1, 1), None), Cell(CellAddress("S", 2, 1), ""), Cell(CellAddress("S", 3, 1), 0)]
    s = Sheet.from_cells("S", cells)
    assert list(s.cells) == [(1, 3)]


def test_formula_and_cached_value_kept_together():
    c = Cell(CellAddress("S", 1, 1), 6.0, "SUM(B2:B4)")
    assert c.value == 6.0 and c.formula == "SUM(B2:B4)"
    assert not Cell(CellAddress("S", 1, 1), None, "A2").is_empty


def test_sheet_names_unique_case_insensitive():
    with pytest.raises(ValueError):
        Workbook("x", (Sheet("Data"), Sheet("DATA")))


def test_image_asset_validation():
    with pytest.raises(ValueError):
        ImageAsset("i", b"", "image/png")
    with pytest.raises(ValueError):
        ImageAsset("i", b"x", "image/gif")
