"""Read ``.xlsx`` (OOXML) workbooks into the in-memory model.

Only raster images stored under ``xl/media`` are ingested. Drawing parts
that carry charts or other vector shapes are reported in
``Workbook.warnings`` instead.
"""

from __future__ import annotations

import datetime as _dt
import logging
import posixpath
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterator, Optional
from xml.etree import ElementTree as ET

from .workbook import (
    A1ParseError,
    Cell,
    CellAddress,
    ImageAsset,
    Sheet,
    Workbook,
    bounding_box,
    column_index,
    parse_range,
)

log = logging.getLogger(__name__)

NS_MAIN = "http://schemas.openxmlformats.org/spreadsheetml/2006/main"
NS_REL = "http://schemas.openxmlformats.org/officeDocument/2006/relationships"
NS_PKG_REL = "http://schemas.openxmlformats.org/package/2006/relationships"
NS_XDR = "http://schemas.openxmlformats.org/drawingml/2006/spreadsheetDrawing"
NS_A = "http://schemas.openxmlformats.org/drawingml/2006/main"

REL_DRAWING = "http://schemas.openxmlformats.org/officeDocument/2006/relationships/drawing"

_MEDIA_TYPES = {".png": "image/png", ".jpg": "image/jpeg", ".jpeg": "image/jpeg"}
_OLE_MAGIC = b"\xd0\xcf\x11\xe0\xa1\xb1\x1a\xe1"
_EXCEL_EPOCH = _dt.datetime(1899, 12, 30)


def _q(ns: str, tag: str) -> str:
    return f"{{{ns}}}{tag}"


class IngestError(ValueError):
    """Base class for workbook ingest failures; ``member`` names the archive part."""

    def __init__(self, message: str, member: Optional[str] = None) -> None:
        super().__init__(message if member is None else f"{message} [{member}]")
        self.member = member


class NotAZipError(IngestError):
    pass


class UnsupportedFormatError(IngestError):
    pass


class MissingPartError(IngestError):
    pass


class CellLimitError(IngestError):
    pass


class MalformedXMLError(IngestError):
    pass


@dataclass(frozen=True)
class IngestOptions:
    max_cells: int = 8_000_000
    include_images: bool = True

    def __post_init__(self) -> None:
        if self.max_cells <= 0:
            raise ValueError("max_cells must be > 0")


@dataclass(frozen=True)
class _SheetEntry:
    name: str
    part: str


class _Package:
    """Thin wrapper over the zip archive with part-name aware helpers."""

    def __init__(self, path: str | Path) -> None:
        self.path = str(path)
        try:
            with open(self.path, "rb") as fh:
                head = fh.read(8)
        except OSError as exc:
            raise IngestError(f"cannot read {self.path}: {exc}") from exc
        if head == _OLE_MAGIC:
            raise UnsupportedFormatError(f"{self.path} is a legacy .xls file; only .xlsx is supported")
        try:
            self.zf = zipfile.ZipFile(self.path)
        except zipfile.BadZipFile as exc:
            raise NotAZipError(f"{self.path} is not a zip archive") from exc
        self.names = set(self.zf.namelist())
        for required in ("[Content_Types].xml", "xl/workbook.xml"):
            if required not in self.names:
                self.zf.close()
                raise MissingPartError(f"{self.path} is missing a required part", required)

    def close(self) -> None:
        self.zf.close()

    def open(self, member: str) -> IO[bytes]:
        if member not in self.names:
            raise MissingPartError(f"{self.path} is missing a referenced part", member)
        return self.zf.open(member)

    def parse(self, member: str) -> ET.Element:
        with self.open(member) as fh:
            try:
                return ET.parse(fh).getroot()
            except ET.ParseError as exc:
                raise MalformedXMLError(f"malformed XML: {exc}", member) from exc

    def iterparse(self, member: str, events=("end",)) -> Iterator[tuple[str, ET.Element]]:
        with self.open(member) as fh:
            try:
                yield from ET.iterparse(fh, events=events)
            except ET.ParseError as exc:
                raise MalformedXMLError(f"malformed XML: {exc}", member) from exc

    def rels(self, part: str) -> dict[str, tuple[str, str]]:
        """Relationship id -> (type, resolved target part) for ``part``."""
        base, name = posixpath.split(part)
        rel_part = posixpath.join(base, "_rels", name + ".rels")
        if rel_part not in self.names:
            return {}
        out: dict[str, tuple[str, str]] = {}
        for rel in self.parse(rel_part).iter(_q(NS_PKG_REL, "Relationship")):
            if rel.get("TargetMode") == "External":
                continue
            target = rel.get("Target", "")
            if target.startswith("/"):
                resolved = target.lstrip("/")
            else:
                resolved = posixpath.normpath(posixpath.join(base, target))
            out[rel.get("Id", "")] = (rel.get("Type", ""), resolved)
        return out


def _sheet_entries(pkg: _Package) -> list[_SheetEntry]:
    root = pkg.parse("xl/workbook.xml")
    rels = pkg.rels("xl/workbook.xml")
    entries = []
    sheets = root.find(_q(NS_MAIN, "sheets"))
    if sheets is None:
        return entries
    for el in sheets.findall(_q(NS_MAIN, "sheet")):
        rid = el.get(_q(NS_REL, "id"))
        if rid not in rels:
            raise MissingPartError(f"sheet {el.get('name')!r} has no relationship {rid!r}", "xl/_rels/workbook.xml.rels")
        entries.append(_SheetEntry(el.get("name", ""), rels[rid][1]))
    return entries


def _shared_strings(pkg: _Package) -> list[str]:
    member = "xl/sharedStrings.xml"
    if member not in pkg.names:
        return []
    out: list[str] = []
    si_tag, t_tag, rph_tag = _q(NS_MAIN, "si"), _q(NS_MAIN, "t"), _q(NS_MAIN, "rPh")
    for _, el in pkg.iterparse(member):
        if el.tag != si_tag:
            continue
        parts = []
        for child in el:
            if child.tag == t_tag:
                parts.append(child.text or "")
            elif child.tag != rph_tag:
                parts.extend(t.text or "" for t in child.iter(t_tag))
        out.append("".join(parts))
        el.clear()
    return out


def _number(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def _iso_to_serial(text: str) -> float:
    stamp = _dt.datetime.fromisoformat(text.rstrip("Z"))
    delta = stamp - _EXCEL_EPOCH
    return delta.days + delta.seconds / 86400 + delta.microseconds / 86_400_000_000


class _CellBudget:
    def __init__(self, limit: int) -> None:
        self.limit = limit
        self.used = 0

    def take(self, member: str) -> None:
        self.used += 1
        if self.used > self.limit:
            raise CellLimitError(f"workbook exceeds max_cells={self.limit}", member)


def _parse_sheet(
    pkg: _Package, entry: _SheetEntry, strings: list[str], budget: _CellBudget
) -> tuple[dict[tuple[int, int], Cell], list[str]]:
    """Return the sparse cell map and the relationship ids of ``<drawing>`` elements."""
    tag_c, tag_v, tag_f = _q(NS_MAIN, "c"), _q(NS_MAIN, "v"), _q(NS_MAIN, "f")
    tag_is, tag_t, tag_row = _q(NS_MAIN, "is"), _q(NS_MAIN, "t"), _q(NS_MAIN, "row")
    tag_drawing = _q(NS_MAIN, "drawing")
    rid_attr = _q(NS_REL, "id")
    name = entry.name
    cells: dict[tuple[int, int], Cell] = {}
    drawings: list[str] = []
    cur_row = 0
    next_col = 1
    for event, el in pkg.iterparse(entry.part, events=("start", "end")):
        tag = el.tag
        if event == "start":
            if tag == tag_row:
                r = el.get("r")
                cur_row = int(r) if r else cur_row + 1
                next_col = 1
            continue
        if tag == tag_c:
            ref = el.get("r")
            if ref:
                letters = ref.rstrip("0123456789")
                col = column_index(letters)
                row = int(ref[len(letters):])
            else:
                col, row = next_col, cur_row
            next_col = col + 1
            ctype = el.get("t", "n")
            v_el = el.find(tag_v)
            f_el = el.find(tag_f)
            raw = v_el.text if v_el is not None else None
            formula = f_el.text if f_el is not None and f_el.text else None
            is_date = False
            if ctype == "s":
                value = strings[int(raw)] if raw is not None else None
            elif ctype == "inlineStr":
                is_el = el.find(tag_is)
                value = "".join(t.text or "" for t in is_el.iter(tag_t)) if is_el is not None else None
            elif ctype == "b":
                value = None if raw is None else raw.strip() == "1"
            elif ctype in ("str", "e"):
                value = raw
            elif ctype == "d":
                value = _iso_to_serial(raw) if raw else None
                is_date = value is not None
            else:
                value = _number(raw) if raw not in (None, "") else None
            if (value is not None and value != "") or formula is not None:
                budget.take(entry.part)
                cells[(row, col)] = Cell(CellAddress(name, col, row), value, formula, is_date)
            el.clear()
        elif tag == tag_row:
            el.clear()
        elif tag == tag_drawing:
            rid = el.get(rid_attr)
            if rid:
                drawings.append(rid)
    return cells, drawings


def _parse_drawing(
    pkg: _Package, part: str, sheet_name: str, warnings: list[str]
) -> list[tuple[str, Optional[str], Optional[CellAddress], Optional[str]]]:
    """(media part, name, anchor, caption) for each raster picture in a drawing part."""
    root = pkg.parse(part)
    rels = pkg.rels(part)
    out = []
    anchors = [
        el
        for el in root
        if el.tag in (_q(NS_XDR, "twoCellAnchor"), _q(NS_XDR, "oneCellAnchor"), _q(NS_XDR, "absoluteAnchor"))
    ]
    for anchor in anchors:
        pic = anchor.find(_q(NS_XDR, "pic"))
        if pic is None:
            if anchor.find(_q(NS_XDR, "graphicFrame")) is not None or anchor.find(_q(NS_XDR, "sp")) is not None:
                warnings.append(f"sheet {sheet_name!r}: non-raster drawing object skipped ({part})")
            continue
        cnv = pic.find(f"{_q(NS_XDR, 'nvPicPr')}/{_q(NS_XDR, 'cNvPr')}")
        blip = pic.find(f".//{_q(NS_A, 'blip')}")
        if blip is None:
            continue
        rid = blip.get(_q(NS_REL, "embed"))
        if rid not in rels:
            warnings.append(f"sheet {sheet_name!r}: picture with unresolved relationship {rid!r} ({part})")
            continue
        loc: Optional[CellAddress] = None
        frm = anchor.find(_q(NS_XDR, "from"))
        if frm is not None:
            try:
                col = int(frm.findtext(_q(NS_XDR, "col"), "")) + 1
                row = int(frm.findtext(_q(NS_XDR, "row"), "")) + 1
                loc = CellAddress(sheet_name, col, row)
            except ValueError:
                loc = None
        name = cnv.get("name") if cnv is not None else None
        caption = cnv.get("descr") if cnv is not None else None
        out.append((rels[rid][1], name or None, loc, caption or None))
    return out


def ingest_workbook(path: str | Path, opts: IngestOptions = IngestOptions()) -> Workbook:
    """Parse an ``.xlsx`` file into a :class:`Workbook`.

    Sheets keep workbook order. Images are attached to the sheet whose
    drawing references them; media not referenced by any drawing goes to
    the first sheet with no anchor.
    """
    pkg = _Package(path)
    try:
        entries = _sheet_entries(pkg)
        strings = _shared_strings(pkg)
        budget = _CellBudget(opts.max_cells)
        warnings: list[str] = []
        used_ids: set[str] = set()
        seen_media: set[str] = set()
        parsed = []
        for entry in entries:
            cells, drawing_rids = _parse_sheet(pkg, entry, strings, budget)
            images: list[ImageAsset] = []
            if drawing_rids:
                sheet_rels = pkg.rels(entry.part)
                for rid in drawing_rids:
                    if rid not in sheet_rels:
                        warnings.append(f"sheet {entry.name!r}: drawing relationship {rid!r} missing")
                        continue
                    for media, name, anchor, caption in _parse_drawing(pkg, sheet_rels[rid][1], entry.name, warnings):
                        seen_media.add(media)
                        if not opts.include_images:
                            continue
                        asset = _load_media(pkg, media, name, anchor, caption, used_ids, warnings)
                        if asset is not None:
                            images.append(asset)
            parsed.append((entry.name, cells, images))
        if opts.include_images and parsed:
            orphans = sorted(n for n in pkg.names if n.startswith("xl/media/") and n not in seen_media)
            for media in orphans:
                asset = _load_media(pkg, media, None, None, None, used_ids, warnings)
                if asset is not None:
                    parsed[0][2].append(asset)
        sheets = tuple(
            Sheet(name=name, cells=cells, images=tuple(images), used_range=bounding_box(cells))
            for name, cells, images in parsed
        )
        for w in warnings:
            log.warning("%s: %s", pkg.path, w)
        return Workbook(source_path=pkg.path, sheets=sheets, warnings=tuple(warnings))
    finally:
        pkg.close()


def _load_media(
    pkg: _Package,
    media: str,
    name: Optional[str],
    anchor: Optional[CellAddress],
    caption: Optional[str],
    used_ids: set[str],
    warnings: list[str],
) -> Optional[ImageAsset]:
    ext = posixpath.splitext(media)[1].lower()
    media_type = _MEDIA_TYPES.get(ext)
    if media_type is None:
        warnings.append(f"unsupported media type skipped: {media}")
        return None
    with pkg.open(media) as fh:
        data = fh.read()
    if not data:
        warnings.append(f"empty media part skipped: {media}")
        return None
    base = name or posixpath.splitext(posixpath.basename(media))[0]
    image_id, n = base, 1
    while image_id in used_ids:
        n += 1
        image_id = f"{base}_{n}"
    used_ids.add(image_id)
    return ImageAsset(id=image_id, bytes=data, media_type=media_type, anchor=anchor, caption=caption)


def _declared_rows(pkg: _Package, part: str) -> int:
    tag_dim, tag_row = _q(NS_MAIN, "dimension"), _q(NS_MAIN, "row")
    declared: Optional[int] = None
    max_row = 0
    for _, el in pkg.iterparse(part, events=("start",)):
        if el.tag == tag_dim:
            try:
                rng = parse_range(el.get("ref", ""), "_")
            except A1ParseError:
                continue
            declared = rng.max_row - rng.min_row + 1
            if rng.n_cells > 1:
                return declared
        elif el.tag == tag_row:
            # a single-cell dimension is ambiguous; any row element settles it
            if declared is not None:
                return declared
            r = el.get("r")
            max_row = int(r) if r else max_row + 1
    return max_row


def list_sheets(path: str | Path) -> list[tuple[str, int]]:
    """Sheet names in workbook order with row counts from each sheet's declared dimension."""
    pkg = _Package(path)
    try:
        return [(e.name, _declared_rows(pkg, e.part)) for e in _sheet_entries(pkg)]
    finally:
        pkg.close()
