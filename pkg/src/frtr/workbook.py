"""In-memory workbook model and A1 cell addressing."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

MAX_COLUMN = 16384
MAX_ROW = 1048576

ALLOWED_MEDIA_TYPES = ("image/png", "image/jpeg")

Scalar = Union[None, float, int, str, bool]


class A1ParseError(ValueError):
    """Malformed A1 reference; ``token`` is the offending piece."""

    def __init__(self, token: str, message: str = "malformed cell reference") -> None:
        super().__init__(f"{message}: {token!r}")
        self.token = token


_CELL_RE = re.compile(r"^\$?([A-Za-z]{1,3})\$?([0-9]+)$")
_SHEET_BARE_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")


def column_letter(col: int) -> str:
    if not 1 <= col <= MAX_COLUMN:
        raise ValueError(f"column out of range: {col}")
    out = []
    while col:
        col, rem = divmod(col - 1, 26)
        out.append(chr(65 + rem))
    return "".join(reversed(out))


def column_index(letters: str) -> int:
    n = 0
    for ch in letters.upper():
        if not "A" <= ch <= "Z":
            raise A1ParseError(letters, "bad column letters")
        n = n * 26 + (ord(ch) - 64)
    if not 1 <= n <= MAX_COLUMN:
        raise A1ParseError(letters, "column out of range")
    return n


def quote_sheet(name: str) -> str:
    if _SHEET_BARE_RE.match(name) and not _CELL_RE.match(name):
        return name
    return "'" + name.replace("'", "''") + "'"


def split_sheet(text: str) -> tuple[Optional[str], str]:
    """Split ``Sheet!REF`` / ``'My Sheet'!REF`` into (sheet, ref)."""
    text = text.strip()
    if text.startswith("'"):
        i = 1
        buf = []
        while i < len(text):
            ch = text[i]
            if ch == "'":
                if i + 1 < len(text) and text[i + 1] == "'":
                    buf.append("'")
                    i += 2
                    continue
                break
            buf.append(ch)
            i += 1
        else:
            raise A1ParseError(text, "unterminated quoted sheet name")
        rest = text[i + 1 :]
        if not rest.startswith("!"):
            raise A1ParseError(text, "expected '!' after sheet name")
        if not buf:
            raise A1ParseError(text, "empty sheet name")
        return "".join(buf), rest[1:]
    if "!" in text:
        sheet, _, ref = text.rpartition("!")
        if not sheet:
            raise A1ParseError(text, "empty sheet name")
        return sheet, ref
    return None, text


@dataclass(frozen=True, slots=True, order=True)
class CellAddress:
    sheet: str
    column: int
    row: int

    def __post_init__(self) -> None:
        if not self.sheet:
            raise ValueError("sheet name must be non-empty")
        if not 1 <= self.column <= MAX_COLUMN:
            raise ValueError(f"column out of range: {self.column}")
        if not 1 <= self.row <= MAX_ROW:
            raise ValueError(f"row out of range: {self.row}")

    def a1(self, with_sheet: bool = False) -> str:
        return render_a1(self, with_sheet)


def parse_a1(text: str, context_sheet: Optional[str] = None) -> CellAddress:
    """Parse ``[Sheet!]B5`` into a CellAddress.

    ``context_sheet`` supplies the sheet when the reference has none.
    ``$`` absolute markers are accepted and dropped.
    """
    sheet, ref = split_sheet(text)
    m = _CELL_RE.match(ref.strip())
    if not m:
        raise A1ParseError(ref if ref else text)
    sheet = sheet if sheet is not None else context_sheet
    if not sheet:
        raise A1ParseError(text, "no sheet in reference and no context sheet")
    row = int(m.group(2))
    if not 1 <= row <= MAX_ROW:
        raise A1ParseError(m.group(2), "row out of range")
    return CellAddress(sheet, column_index(m.group(1)), row)


def render_a1(addr: CellAddress, with_sheet: bool = False) -> str:
    ref = f"{column_letter(addr.column)}{addr.row}"
    if with_sheet:
        return f"{quote_sheet(addr.sheet)}!{ref}"
    return ref


@dataclass(frozen=True, slots=True)
class CellRange:
    """Rectangular block on one sheet; bounds are inclusive and 1-based."""

    sheet: str
    min_col: int
    min_row: int
    max_col: int
    max_row: int

    def contains(self, addr: CellAddress) -> bool:
        return (
            addr.sheet == self.sheet
            and self.min_col <= addr.column <= self.max_col
            and self.min_row <= addr.row <= self.max_row
        )

    def a1(self, with_sheet: bool = False) -> str:
        ref = (
            f"{column_letter(self.min_col)}{self.min_row}:"
            f"{column_letter(self.max_col)}{self.max_row}"
        )
        return f"{quote_sheet(self.sheet)}!{ref}" if with_sheet else ref

    @property
    def n_cells(self) -> int:
        return (self.max_col - self.min_col + 1) * (self.max_row - self.min_row + 1)


def parse_range(text: str, context_sheet: Optional[str] = None) -> CellRange:
    """Parse ``[Sheet!]A1:C3``; a single cell parses as a 1x1 range."""
    sheet, ref = split_sheet(text)
    sheet = sheet if sheet is not None else context_sheet
    if not sheet:
        raise A1ParseError(text, "no sheet in range and no context sheet")
    first, sep, last = ref.partition(":")
    a = parse_a1(first, sheet)
    b = parse_a1(last, sheet) if sep else a
    return CellRange(
        sheet,
        min(a.column, b.column),
        min(a.row, b.row),
        max(a.column, b.column),
        max(a.row, b.row),
    )


@dataclass(frozen=True, slots=True)
class Cell:
    """One non-empty cell.

    ``formula`` is stored verbatim without the leading ``=``; ``value`` is
    the cached result when the file carried one. Dates are kept as serial
    numbers with ``is_date`` as the display hint.
    """

    address: CellAddress
    value: Scalar = None
    formula: Optional[str] = None
    is_date: bool = False

    @property
    def is_empty(self) -> bool:
        return (self.value is None or self.value == "") and self.formula is None


@dataclass(frozen=True)
class ImageAsset:
    id: str
    bytes: bytes
    media_type: str
    anchor: Optional[CellAddress] = None
    caption: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.bytes:
            raise ValueError(f"image {self.id!r} has no bytes")
        if self.media_type not in ALLOWED_MEDIA_TYPES:
            raise ValueError(f"unsupported media type {self.media_type!r} for image {self.id!r}")


@dataclass(frozen=True)
class Sheet:
    """A worksheet with a sparse cell map keyed by ``(row, column)``.

    ``used_range`` is ``(min_col, min_row, max_col, max_row)`` or ``None``
    for an empty sheet.
    """

    name: str
    cells: dict[tuple[int, int], Cell] = field(default_factory=dict)
    images: tuple[ImageAsset, ...] = ()
    used_range: Optional[tuple[int, int, int, int]] = None

    @classmethod
    def from_cells(
        cls, name: str, cells: Iterator[Cell] | list[Cell], images: tuple[ImageAsset, ...] = ()
    ) -> "Sheet":
        store: dict[tuple[int, int], Cell] = {}
        for c in cells:
            if c.is_empty:
                continue
            store[(c.address.row, c.address.column)] = c
        return cls(name=name, cells=store, images=tuple(images), used_range=bounding_box(store))

    def get(self, column: int, row: int) -> Optional[Cell]:
        return self.cells.get((row, column))

    @property
    def range(self) -> Optional[CellRange]:
        if self.used_range is None:
            return None
        return CellRange(self.name, *self.used_range)


def bounding_box(cells: dict[tuple[int, int], Cell]) -> Optional[tuple[int, int, int, int]]:
    if not cells:
        return None
    rows = [r for r, _ in cells]
    cols = [c for _, c in cells]
    return (min(cols), min(rows), max(cols), max(rows))


@dataclass(frozen=True)
class Workbook:
    source_path: str
    sheets: tuple[Sheet, ...] = ()
    warnings: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for s in self.sheets:
            key = s.name.casefold()
            if key in seen:
                raise ValueError(f"duplicate sheet name {s.name!r}")
            seen.add(key)
        ids = [img.id for s in self.sheets for img in s.images]
        if len(ids) != len(set(ids)):
            raise ValueError("image ids must be unique within a workbook")

    def sheet(self, name: str) -> Sheet:
        key = name.casefold()
        for s in self.sheets:
            if s.name.casefold() == key:
                return s
        raise KeyError(name)

    def has_sheet(self, name: str) -> bool:
        return any(s.name.casefold() == name.casefold() for s in self.sheets)

    @property
    def images(self) -> list[ImageAsset]:
        return [img for s in self.sheets for img in s.images]

    @property
    def n_cells(self) -> int:
        return sum(len(s.cells) for s in self.sheets)


def render_value(value: Scalar) -> str:
    """Render a cell value the way unit text and serializations show it."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "TRUE" if value else "FALSE"
    if isinstance(value, float):
        if value.is_integer() and abs(value) < 1e15:
            return str(int(value))
        return repr(value)
    return str(value)
