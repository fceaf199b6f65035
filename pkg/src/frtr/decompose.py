"""Split sheets into row, column, window and image units.

Unit text templates (stable; the index, prompt composer and tests rely on
them)::

    ROW_<r> [<sheet>]: <header>=<value> | <header>=<value> | ...
    COL_<L> [<sheet>] (<header>): r<row>=<value> | r<row>=<value> | ...
    WIN_<A1:B2> [<sheet>]:
    r<row>: <value> | <value> | ...        (one line per sheet row)
    <caption> [IMAGE <id> @ <Sheet!A1>]

Header rows use column letters as keys in their own row units. Empty cells
inside a window render as empty strings between delimiters. Texts over
``max_unit_chars`` are cut at a cell boundary and end with ``…[truncated]``.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Literal, Optional

from .workbook import (
    Cell,
    CellAddress,
    CellRange,
    ImageAsset,
    Sheet,
    Workbook,
    column_letter,
    parse_a1,
    parse_range,
    render_a1,
    render_value,
)

UnitKind = Literal["row", "column", "window", "image"]
UNIT_KINDS: tuple[str, ...] = ("row", "column", "window", "image")
TRUNCATION_SUFFIX = "…[truncated]"


@dataclass(frozen=True)
class Unit:
    unit_id: str
    kind: str
    sheet: str
    span: str
    text: str
    image_ref: Optional[str] = None

    def __post_init__(self) -> None:
        if self.kind not in UNIT_KINDS:
            raise ValueError(f"unknown unit kind {self.kind!r}")
        if (self.kind == "image") != (self.image_ref is not None):
            raise ValueError("image_ref must be set exactly for image units")
        if self.kind != "image" and not self.text:
            raise ValueError("text units need non-empty text")

    def first_cell(self) -> Optional[CellAddress]:
        """Top-left cell of a row/column/window span."""
        if self.kind == "image":
            return None
        return parse_a1(self.span.split(":")[0], self.sheet)

    def covers(self, addr: CellAddress) -> bool:
        if self.kind == "image" or addr.sheet != self.sheet:
            return False
        return parse_range(self.span, self.sheet).contains(addr)


@dataclass(frozen=True)
class DecomposeConfig:
    k_target: int = 100
    window_stride_factor: float = 1.0
    max_unit_chars: int = 2000
    header_rows: int = 1
    exclude_sheets: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.k_target < 1:
            raise ValueError("k_target must be >= 1")
        if not 0 < self.window_stride_factor <= 1:
            raise ValueError("window_stride_factor must be in (0, 1]")
        if self.max_unit_chars < 64:
            raise ValueError("max_unit_chars must be >= 64")
        if self.header_rows < 0:
            raise ValueError("header_rows must be >= 0")


def window_size(n_cells: int, k_target: int) -> int:
    """Side length ``ceil(sqrt(n_cells / k_target))``, at least 1."""
    if n_cells < 0 or k_target < 1:
        raise ValueError("need n_cells >= 0 and k_target >= 1")
    # smallest s with s*s*k_target >= n_cells; integer math, no float rounding
    s = math.isqrt(n_cells // k_target)
    while s * s * k_target < n_cells:
        s += 1
    return max(1, s)


def window_stride(s: int, stride_factor: float) -> int:
    return max(1, math.ceil(s * stride_factor))


def window_origins(lo: int, hi: int, s: int, stride: int) -> list[int]:
    """Start offsets along one axis so windows of side ``s`` cover [lo, hi]."""
    starts = list(range(lo, hi + 1, stride))
    # with overlap the last tiles can be fully inside an earlier window
    out = []
    for start in starts:
        out.append(start)
        if start + s - 1 >= hi:
            break
    return out


class _Builder:
    """Accumulates cell pieces until the char budget is hit."""

    __slots__ = ("parts", "size", "limit", "truncated")

    def __init__(self, head: str, limit: int) -> None:
        self.parts = [head]
        self.size = len(head)
        self.limit = limit - len(TRUNCATION_SUFFIX)
        self.truncated = False

    def add(self, piece: str) -> bool:
        if self.truncated:
            return False
        if self.size + len(piece) > self.limit:
            self.truncated = True
            return False
        self.parts.append(piece)
        self.size += len(piece)
        return True

    def text(self) -> str:
        out = "".join(self.parts)
        return out + TRUNCATION_SUFFIX if self.truncated else out


def _cell_text(cell: Cell) -> str:
    text = render_value(cell.value)
    if not text and cell.formula is not None:
        text = "=" + cell.formula
    return " ".join(text.split("\n"))


def _headers(sheet: Sheet, min_col: int, max_col: int, min_row: int, header_rows: int) -> dict[int, str]:
    out: dict[int, str] = {}
    for col in range(min_col, max_col + 1):
        parts = []
        for r in range(min_row, min_row + header_rows):
            cell = sheet.cells.get((r, col))
            if cell is not None:
                t = _cell_text(cell).strip()
                if t:
                    parts.append(t)
        out[col] = " / ".join(parts) if parts else column_letter(col)
    return out


def sheet_unit_id(sheet: str, kind: str, key: str) -> str:
    return f"{sheet}!{kind}:{key}"


def _image_unit(sheet_name: str, img: ImageAsset) -> Unit:
    where = render_a1(img.anchor, with_sheet=True) if img.anchor else sheet_name
    tag = f"[IMAGE {img.id} @ {where}]"
    text = f"{img.caption} {tag}" if img.caption else tag
    return Unit(
        unit_id=sheet_unit_id(sheet_name, "img", img.id),
        kind="image",
        sheet=sheet_name,
        span=img.id,
        text=text,
        image_ref=img.id,
    )


def decompose_sheet(sheet: Sheet, cfg: DecomposeConfig = DecomposeConfig()) -> list[Unit]:
    """Row, column, window and image units for one sheet, in that order."""
    units: list[Unit] = []
    name = sheet.name
    if sheet.used_range is not None:
        min_col, min_row, max_col, max_row = sheet.used_range
        limit = cfg.max_unit_chars
        header_rows = min(cfg.header_rows, max_row - min_row + 1)
        headers = _headers(sheet, min_col, max_col, min_row, header_rows)
        last_header_row = min_row + header_rows - 1
        by_row: dict[int, list[tuple[int, Cell]]] = defaultdict(list)
        by_col: dict[int, list[tuple[int, Cell]]] = defaultdict(list)
        for (r, c), cell in sorted(sheet.cells.items()):
            by_row[r].append((c, cell))
            by_col[c].append((r, cell))
        first_letter, last_letter = column_letter(min_col), column_letter(max_col)

        for r in sorted(by_row):
            b = _Builder(f"ROW_{r} [{name}]: ", limit)
            is_header = r <= last_header_row
            for i, (c, cell) in enumerate(by_row[r]):
                key = column_letter(c) if is_header else headers[c]
                if not b.add(("" if i == 0 else " | ") + f"{key}={_cell_text(cell)}"):
                    break
            units.append(
                Unit(sheet_unit_id(name, "row", str(r)), "row", name, f"{first_letter}{r}:{last_letter}{r}", b.text())
            )

        for c in sorted(by_col):
            letter = column_letter(c)
            b = _Builder(f"COL_{letter} [{name}] ({headers[c]}):", limit)
            first = True
            for r, cell in by_col[c]:
                if r <= last_header_row:
                    continue
                if not b.add((" " if first else " | ") + f"r{r}={_cell_text(cell)}"):
                    break
                first = False
            units.append(
                Unit(sheet_unit_id(name, "col", letter), "column", name, f"{letter}{min_row}:{letter}{max_row}", b.text())
            )

        n_cells = (max_col - min_col + 1) * (max_row - min_row + 1)
        s = window_size(n_cells, cfg.k_target)
        stride = window_stride(s, cfg.window_stride_factor)
        row_starts = window_origins(min_row, max_row, s, stride)
        col_starts = window_origins(min_col, max_col, s, stride)
        for r0 in row_starts:
            r1 = min(r0 + s - 1, max_row)
            rows_here = [r for r in range(r0, r1 + 1) if r in by_row]
            if not rows_here:
                continue
            for c0 in col_starts:
                c1 = min(c0 + s - 1, max_col)
                if not any(c0 <= c <= c1 for r in rows_here for c, _ in by_row[r]):
                    continue
                span = f"{column_letter(c0)}{r0}:{column_letter(c1)}{r1}"
                b = _Builder(f"WIN_{span} [{name}]:", limit)
                for r in range(r0, r1 + 1):
                    if not b.add(f"\nr{r}: "):
                        break
                    for c in range(c0, c1 + 1):
                        cell = sheet.cells.get((r, c))
                        piece = _cell_text(cell) if cell is not None else ""
                        if not b.add(piece if c == c0 else " | " + piece):
                            break
                    if b.truncated:
                        break
                units.append(Unit(sheet_unit_id(name, "win", span), "window", name, span, b.text()))

    units.extend(_image_unit(name, img) for img in sheet.images)
    return units


def decompose_workbook(wb: Workbook, cfg: DecomposeConfig = DecomposeConfig()) -> list[Unit]:
    excluded = {n.casefold() for n in cfg.exclude_sheets}
    units: list[Unit] = []
    for sheet in wb.sheets:
        if sheet.name.casefold() in excluded:
            continue
        units.extend(decompose_sheet(sheet, cfg))
    return units


def serialize_workbook(wb: Workbook, exclude_sheets: tuple[str, ...] = ()) -> str:
    """Full, untruncated line-per-row serialization of every sheet.

    This is the naive whole-workbook context used as the denominator of the
    compression ratio.
    """
    excluded = {n.casefold() for n in exclude_sheets}
    out: list[str] = []
    for sheet in wb.sheets:
        if sheet.name.casefold() in excluded or sheet.used_range is None:
            continue
        min_col, min_row, max_col, max_row = sheet.used_range
        out.append(f"## Sheet {sheet.name} ({CellRange(sheet.name, *sheet.used_range).a1()})")
        by_row: dict[int, dict[int, Cell]] = defaultdict(dict)
        for (r, c), cell in sheet.cells.items():
            by_row[r][c] = cell
        for r in range(min_row, max_row + 1):
            row = by_row.get(r)
            if not row:
                continue
            vals = [_cell_text(row[c]) if c in row else "" for c in range(min_col, max_col + 1)]
            out.append(f"r{r}: " + " | ".join(vals))
        for img in sheet.images:
            out.append(_image_unit(sheet.name, img).text)
    return "\n".join(out)
