"""Minimal deterministic ``.xlsx`` writer.

Writes dense row blocks anchored at A1, shared strings, formulas with
cached values, and raster pictures with alternate text. Zip entries carry a
fixed timestamp so identical input produces identical bytes.
"""

from __future__ import annotations

import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence
from xml.sax.saxutils import escape, quoteattr

from .workbook import column_letter

_FIXED_TIME = (1980, 1, 1, 0, 0, 0)

_XML_DECL = '<?xml version="1.0" encoding="UTF-8" standalone="yes"?>\n'
_NS_MAIN = "http://schemas.openxmlformats.org/spreadsheetml/2006/main"
_NS_R = "http://schemas.openxmlformats.org/officeDocument/2006/relationships"
_NS_PKG = "http://schemas.openxmlformats.org/package/2006/relationships"
_REL_BASE = "http://schemas.openxmlformats.org/officeDocument/2006/relationships"


@dataclass(frozen=True)
class Formula:
    """Formula text (no leading ``=``) with an optional cached result."""

    text: str
    cached: Any = None


@dataclass(frozen=True)
class Picture:
    name: str
    data: bytes
    column: int
    row: int
    caption: str = ""
    extension: str = "png"
    width_cols: int = 4
    height_rows: int = 12


@dataclass
class SheetData:
    name: str
    rows: Sequence[Sequence[Any]] = ()
    pictures: list[Picture] = field(default_factory=list)


class _Strings:
    def __init__(self) -> None:
        self.index: dict[str, int] = {}
        self.count = 0

    def get(self, s: str) -> int:
        self.count += 1
        i = self.index.get(s)
        if i is None:
            i = self.index[s] = len(self.index)
        return i


def _num(v: float | int) -> str:
    if isinstance(v, float):
        if v != v or v in (float("inf"), float("-inf")):
            raise ValueError("cannot write non-finite number")
        return repr(v)
    return str(v)


def _cell_xml(ref: str, value: Any, strings: _Strings) -> str:
    if isinstance(value, Formula):
        f = f"<f>{escape(value.text)}</f>"
        c = value.cached
        if c is None:
            return f'<c r="{ref}">{f}</c>'
        if isinstance(c, bool):
            return f'<c r="{ref}" t="b">{f}<v>{int(c)}</v></c>'
        if isinstance(c, (int, float)):
            return f'<c r="{ref}">{f}<v>{_num(c)}</v></c>'
        return f'<c r="{ref}" t="str">{f}<v>{escape(str(c))}</v></c>'
    if isinstance(value, bool):
        return f'<c r="{ref}" t="b"><v>{int(value)}</v></c>'
    if isinstance(value, (int, float)):
        return f'<c r="{ref}"><v>{_num(value)}</v></c>'
    return f'<c r="{ref}" t="s"><v>{strings.get(str(value))}</v></c>'


def _is_blank(v: Any) -> bool:
    return v is None or (isinstance(v, str) and v == "")


def _sheet_xml_chunks(sheet: SheetData, strings: _Strings, has_drawing: bool):
    n_rows = len(sheet.rows)
    n_cols = max((len(r) for r in sheet.rows), default=0)
    dim = "A1" if n_rows == 0 or n_cols == 0 else f"A1:{column_letter(n_cols)}{n_rows}"
    yield _XML_DECL
    yield f'<worksheet xmlns="{_NS_MAIN}" xmlns:r="{_NS_R}"><dimension ref="{dim}"/><sheetData>'
    buf: list[str] = []
    letters = [column_letter(i + 1) for i in range(n_cols)]
    for r_idx, row in enumerate(sheet.rows, start=1):
        cells = [
            _cell_xml(f"{letters[c_idx]}{r_idx}", v, strings)
            for c_idx, v in enumerate(row)
            if not _is_blank(v)
        ]
        if cells:
            buf.append(f'<row r="{r_idx}">' + "".join(cells) + "</row>")
        if len(buf) >= 2000:
            yield "".join(buf)
            buf.clear()
    if buf:
        yield "".join(buf)
    yield "</sheetData>"
    if has_drawing:
        yield '<drawing r:id="rId1"/>'
    yield "</worksheet>"


def _drawing_xml(pictures: list[Picture]) -> str:
    parts = [
        _XML_DECL,
        '<xdr:wsDr xmlns:xdr="http://schemas.openxmlformats.org/drawingml/2006/spreadsheetDrawing" '
        'xmlns:a="http://schemas.openxmlformats.org/drawingml/2006/main" '
        f'xmlns:r="{_NS_R}">',
    ]
    for i, pic in enumerate(pictures, start=1):
        parts.append(
            '<xdr:twoCellAnchor editAs="oneCell">'
            f"<xdr:from><xdr:col>{pic.column - 1}</xdr:col><xdr:colOff>0</xdr:colOff>"
            f"<xdr:row>{pic.row - 1}</xdr:row><xdr:rowOff>0</xdr:rowOff></xdr:from>"
            f"<xdr:to><xdr:col>{pic.column - 1 + pic.width_cols}</xdr:col><xdr:colOff>0</xdr:colOff>"
            f"<xdr:row>{pic.row - 1 + pic.height_rows}</xdr:row><xdr:rowOff>0</xdr:rowOff></xdr:to>"
            "<xdr:pic><xdr:nvPicPr>"
            f"<xdr:cNvPr id=\"{i + 1}\" name={quoteattr(pic.name)} descr={quoteattr(pic.caption)}/>"
            '<xdr:cNvPicPr><a:picLocks noChangeAspect="1"/></xdr:cNvPicPr></xdr:nvPicPr>'
            f'<xdr:blipFill><a:blip r:embed="rId{i}"/><a:stretch><a:fillRect/></a:stretch></xdr:blipFill>'
            '<xdr:spPr><a:prstGeom prst="rect"><a:avLst/></a:prstGeom></xdr:spPr>'
            "</xdr:pic><xdr:clientData/></xdr:twoCellAnchor>"
        )
    parts.append("</xdr:wsDr>")
    return "".join(parts)


def _rels_xml(rels: list[tuple[str, str, str]]) -> str:
    body = "".join(
        f'<Relationship Id="{rid}" Type="{typ}" Target="{escape(target)}"/>' for rid, typ, target in rels
    )
    return f'{_XML_DECL}<Relationships xmlns="{_NS_PKG}">{body}</Relationships>'


def write_xlsx(path: str | Path, sheets: Sequence[SheetData]) -> Path:
    """Write ``sheets`` to ``path`` and return the path."""
    path = Path(path)
    names = [s.name for s in sheets]
    if len({n.casefold() for n in names}) != len(names):
        raise ValueError("sheet names must be unique")
    strings = _Strings()
    media_exts: set[str] = set()
    overrides: list[tuple[str, str]] = [
        ("/xl/workbook.xml", "application/vnd.openxmlformats-officedocument.spreadsheetml.sheet.main+xml"),
        ("/xl/sharedStrings.xml", "application/vnd.openxmlformats-officedocument.spreadsheetml.sharedStrings+xml"),
    ]

    def info(name: str) -> zipfile.ZipInfo:
        zi = zipfile.ZipInfo(name, date_time=_FIXED_TIME)
        zi.compress_type = zipfile.ZIP_DEFLATED
        zi.external_attr = 0o600 << 16
        return zi

    with zipfile.ZipFile(path, "w") as zf:
        media_no = 0
        drawing_no = 0
        for idx, sheet in enumerate(sheets, start=1):
            has_drawing = bool(sheet.pictures)
            with zf.open(info(f"xl/worksheets/sheet{idx}.xml"), "w") as fh:
                for chunk in _sheet_xml_chunks(sheet, strings, has_drawing):
                    fh.write(chunk.encode("utf-8"))
            overrides.append(
                (f"/xl/worksheets/sheet{idx}.xml", "application/vnd.openxmlformats-officedocument.spreadsheetml.worksheet+xml")
            )
            if not has_drawing:
                continue
            drawing_no += 1
            zf.writestr(
                info(f"xl/worksheets/_rels/sheet{idx}.xml.rels"),
                _rels_xml([("rId1", f"{_REL_BASE}/drawing", f"../drawings/drawing{drawing_no}.xml")]),
            )
            zf.writestr(info(f"xl/drawings/drawing{drawing_no}.xml"), _drawing_xml(sheet.pictures))
            overrides.append(
                (f"/xl/drawings/drawing{drawing_no}.xml", "application/vnd.openxmlformats-officedocument.drawing+xml")
            )
            drels = []
            for i, pic in enumerate(sheet.pictures, start=1):
                media_no += 1
                ext = pic.extension.lower()
                media_exts.add(ext)
                zf.writestr(info(f"xl/media/image{media_no}.{ext}"), pic.data)
                drels.append((f"rId{i}", f"{_REL_BASE}/image", f"../media/image{media_no}.{ext}"))
            zf.writestr(info(f"xl/drawings/_rels/drawing{drawing_no}.xml.rels"), _rels_xml(drels))

        sst = [
            _XML_DECL,
            f'<sst xmlns="{_NS_MAIN}" count="{strings.count}" uniqueCount="{len(strings.index)}">',
        ]
        sst.extend(f'<si><t xml:space="preserve">{escape(s)}</t></si>' for s in strings.index)
        sst.append("</sst>")
        zf.writestr(info("xl/sharedStrings.xml"), "".join(sst))

        sheet_els = "".join(
            f'<sheet name={quoteattr(n)} sheetId="{i}" r:id="rId{i}"/>' for i, n in enumerate(names, start=1)
        )
        zf.writestr(
            info("xl/workbook.xml"),
            f'{_XML_DECL}<workbook xmlns="{_NS_MAIN}" xmlns:r="{_NS_R}"><sheets>{sheet_els}</sheets></workbook>',
        )
        wb_rels = [(f"rId{i}", f"{_REL_BASE}/worksheet", f"worksheets/sheet{i}.xml") for i in range(1, len(names) + 1)]
        wb_rels.append((f"rId{len(names) + 1}", f"{_REL_BASE}/sharedStrings", "sharedStrings.xml"))
        zf.writestr(info("xl/_rels/workbook.xml.rels"), _rels_xml(wb_rels))
        zf.writestr(
            info("_rels/.rels"),
            _rels_xml([("rId1", f"{_REL_BASE}/officeDocument", "xl/workbook.xml")]),
        )
        defaults = [
            ("rels", "application/vnd.openxmlformats-package.relationships+xml"),
            ("xml", "application/xml"),
        ]
        mime = {"png": "image/png", "jpeg": "image/jpeg", "jpg": "image/jpeg"}
        defaults.extend((ext, mime.get(ext, "application/octet-stream")) for ext in sorted(media_exts))
        ct = "".join(f'<Default Extension="{e}" ContentType="{t}"/>' for e, t in defaults)
        ct += "".join(f'<Override PartName="{p}" ContentType="{t}"/>' for p, t in overrides)
        zf.writestr(
            info("[Content_Types].xml"),
            f'{_XML_DECL}<Types xmlns="http://schemas.openxmlformats.org/package/2006/content-types">{ct}</Types>',
        )
    return path


def encode_png(pixels: Sequence[Sequence[tuple[int, int, int]]]) -> bytes:
    """Encode an RGB pixel grid (rows of (r, g, b) tuples) as PNG bytes."""
    import struct
    import zlib

    height = len(pixels)
    width = len(pixels[0]) if height else 0
    if not height or not width:
        raise ValueError("empty image")
    raw = b"".join(b"\x00" + bytes(v for px in row for v in px) for row in pixels)

    def chunk(kind: bytes, data: bytes) -> bytes:
        return struct.pack(">I", len(data)) + kind + data + struct.pack(">I", zlib.crc32(kind + data) & 0xFFFFFFFF)

    ihdr = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b"")
