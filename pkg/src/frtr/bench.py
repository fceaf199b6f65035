"""Benchmark workbooks: synthetic generation, loading, scoring and evaluation.

Workbook layout: a ``Metadata`` sheet, 1 to 5 data sheets, a
``Consolidation`` sheet of SUM formulas over the data sheets, embedded PNG
charts with captions, and a ``Questions`` sheet with the columns
Question / ReasoningType / Provenance / Answer.

Every generated question carries a unique planted token (``zq`` plus six
characters) that occurs in exactly one answer-bearing unit, so retrieval
ground truth is checkable without a model. The generator writes a sidecar
``<stem>.plants.jsonl`` with one record per question.
"""

from __future__ import annotations

import json
import logging
import math
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Optional, Sequence

from .decompose import sheet_unit_id
from .embedding import Embedder
from .formula import FormulaError, eval_formula, parse_formula
from .index import FusedHit, HybridIndex, RetrievalConfig, retrieve
from .reasoner import AnswerClient, AnswerParseError, compose_prompt, generate
from .workbook import (
    A1ParseError,
    CellAddress,
    CellRange,
    Workbook,
    parse_a1,
    parse_range,
    quote_sheet,
    render_value,
)
from .xlsx import ingest_workbook
from .xlsx_writer import Formula, Picture, SheetData, encode_png, write_xlsx

log = logging.getLogger(__name__)

REASONING_TYPES = ("lookup", "aggregation", "cross-sheet", "image", "trend")
QUESTIONS_SHEET = "Questions"
METADATA_SHEET = "Metadata"
CONSOLIDATION_SHEET = "Consolidation"
QUESTION_COLUMNS = ("Question", "ReasoningType", "Provenance", "Answer")

TIER_BOUNDS = {"easy": (2, 4999), "medium": (5000, 20000), "hard": (20001, 210000)}
_TIER_DEFAULTS = {"easy": (1200, 2), "medium": (10000, 3), "hard": (60000, 4)}


class BenchSchemaError(ValueError):
    """Questions sheet missing or malformed; ``row`` is the sheet row if known."""

    def __init__(self, message: str, row: Optional[int] = None) -> None:
        super().__init__(f"row {row}: {message}" if row is not None else message)
        self.row = row


# -- provenance ----------------------------------------------------------------


@dataclass(frozen=True)
class Provenance:
    kind: str  # cell | range | formula | image
    text: str
    cell: Optional[CellAddress] = None
    range: Optional[CellRange] = None
    image_id: Optional[str] = None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "text": self.text}


_IMAGE_PROV_RE = re.compile(r"^image\s*id\s*:\s*(\S+)$", re.IGNORECASE)


def split_provenance(text: str) -> list[str]:
    """Split on commas/semicolons outside parentheses and quotes."""
    items, buf, depth, quoted = [], [], 0, False
    for ch in text:
        if ch == "'":
            quoted = not quoted
        elif not quoted:
            if ch == "(":
                depth += 1
            elif ch == ")":
                depth = max(0, depth - 1)
            elif ch in ",;" and depth == 0:
                items.append("".join(buf))
                buf = []
                continue
        buf.append(ch)
    items.append("".join(buf))
    return [s.strip() for s in items if s.strip()]


def parse_provenance_item(text: str, context_sheet: Optional[str] = None) -> Provenance:
    t = text.strip()
    m = _IMAGE_PROV_RE.match(t)
    if m:
        return Provenance("image", t, image_id=m.group(1))
    if t.startswith("="):
        parse_formula(t, context_sheet or "_")
        return Provenance("formula", t)
    if ":" in t.rpartition("!")[2]:
        return Provenance("range", t, range=parse_range(t, context_sheet))
    return Provenance("cell", t, cell=parse_a1(t, context_sheet))


def parse_provenance(text: str, context_sheet: Optional[str] = None) -> tuple[Provenance, ...]:
    items = tuple(parse_provenance_item(s, context_sheet) for s in split_provenance(text))
    if not items:
        raise ValueError("empty provenance")
    return items


# -- cases -----------------------------------------------------------------------


@dataclass(frozen=True)
class BenchCase:
    case_id: str
    question: str
    reasoning_type: str
    provenance: tuple[Provenance, ...]
    gold_answer: str
    row: int = 0

    def __post_init__(self) -> None:
        if self.reasoning_type not in REASONING_TYPES:
            raise ValueError(f"unknown reasoning type {self.reasoning_type!r}")
        if not self.provenance:
            raise ValueError("provenance must be non-empty")

    def default_sheet(self) -> Optional[str]:
        for p in self.provenance:
            if p.cell is not None:
                return p.cell.sheet
            if p.range is not None:
                return p.range.sheet
        return None


def _norm_header(v: Any) -> str:
    return re.sub(r"[\s_]+", "", render_value(v)).casefold()


def _norm_type(v: str) -> str:
    t = re.sub(r"[\s_]+", "-", v.strip().casefold())
    return {"crosssheet": "cross-sheet", "cross": "cross-sheet"}.get(t, t)


def data_sheet_names(wb: Workbook) -> list[str]:
    skip = {QUESTIONS_SHEET.casefold(), METADATA_SHEET.casefold()}
    return [s.name for s in wb.sheets if s.name.casefold() not in skip]


def cases_from_workbook(wb: Workbook) -> list[BenchCase]:
    if not wb.has_sheet(QUESTIONS_SHEET):
        raise BenchSchemaError(f"{wb.source_path}: no {QUESTIONS_SHEET!r} sheet")
    sheet = wb.sheet(QUESTIONS_SHEET)
    if sheet.used_range is None:
        raise BenchSchemaError(f"{wb.source_path}: {QUESTIONS_SHEET!r} sheet is empty")
    min_col, min_row, max_col, max_row = sheet.used_range
    wanted = {_norm_header(h): h for h in QUESTION_COLUMNS}
    cols: dict[str, int] = {}
    for c in range(min_col, max_col + 1):
        cell = sheet.cells.get((min_row, c))
        if cell is not None and _norm_header(cell.value) in wanted:
            cols[wanted[_norm_header(cell.value)]] = c
    missing = [h for h in QUESTION_COLUMNS if h not in cols]
    if missing:
        raise BenchSchemaError(f"{wb.source_path}: {QUESTIONS_SHEET!r} sheet lacks columns {missing}", min_row)
    data = data_sheet_names(wb)
    context = data[0] if data else None

    def text(r: int, header: str) -> str:
        cell = sheet.cells.get((r, cols[header]))
        return render_value(cell.value).strip() if cell is not None else ""

    cases = []
    for r in range(min_row + 1, max_row + 1):
        q = text(r, "Question")
        if not q:
            continue
        rtype = _norm_type(text(r, "ReasoningType"))
        if rtype not in REASONING_TYPES:
            raise BenchSchemaError(f"unknown reasoning type {text(r, 'ReasoningType')!r}", r)
        try:
            prov = parse_provenance(text(r, "Provenance"), context)
        except (ValueError, FormulaError) as exc:
            raise BenchSchemaError(f"malformed provenance {text(r, 'Provenance')!r}: {exc}", r) from exc
        cases.append(BenchCase(f"Q{len(cases) + 1:03d}", q, rtype, prov, text(r, "Answer"), r))
    return cases


def load_bench(path: str | Path) -> tuple[Workbook, list[BenchCase]]:
    wb = ingest_workbook(path)
    return wb, cases_from_workbook(wb)


# -- answer checking ---------------------------------------------------------------

_CURRENCY_RE = re.compile(r"[$€£¥]|\b(?:usd|eur|gbp)\b", re.IGNORECASE)
_THOUSANDS_RE = re.compile(r"(?<=\d),(?=\d{3}(?!\d))")


def normalize_answer(s: str) -> str:
    s = _CURRENCY_RE.sub("", s)
    s = _THOUSANDS_RE.sub("", s)
    return " ".join(s.split()).casefold()


def parse_number(s: str) -> Optional[float]:
    t = normalize_answer(s).replace(" ", "")
    neg = t.startswith("(") and t.endswith(")")
    if neg:
        t = t[1:-1]
    try:
        v = float(t)
    except ValueError:
        return None
    if not math.isfinite(v):
        return None
    return -v if neg else v


def numbers_agree(a: float, b: float) -> bool:
    return abs(a - b) <= max(1e-6 * max(abs(a), abs(b)), 1e-9)


@dataclass(frozen=True)
class Verdict:
    correct: bool
    matched_by: Optional[str] = None  # numeric | formula-equivalence | string

    def __bool__(self) -> bool:
        return self.correct


def _evaluate(side: str, wb: Optional[Workbook], sheet: Optional[str]) -> Optional[float]:
    num = parse_number(side)
    if num is not None:
        return num
    if wb is None:
        return None
    try:
        return eval_formula(side, wb, sheet)
    except (FormulaError, A1ParseError, RecursionError, ValueError):
        return None


def check_answer(
    predicted: str,
    gold: str,
    provenance: Sequence[Provenance] = (),
    wb: Optional[Workbook] = None,
) -> Verdict:
    """Accept on numeric agreement or formula equivalence; normalized text equality is the fallback."""
    pn, gn = parse_number(predicted), parse_number(gold)
    if pn is not None and gn is not None:
        if numbers_agree(pn, gn):
            return Verdict(True, "numeric")
    elif wb is not None:
        sheet = None
        for p in provenance:
            if p.cell is not None or p.range is not None:
                sheet = (p.cell or p.range).sheet
                break
        if sheet is None:
            names = data_sheet_names(wb)
            sheet = names[0] if names else None
        pv, gv = _evaluate(predicted, wb, sheet), _evaluate(gold, wb, sheet)
        if pv is not None and gv is not None and numbers_agree(pv, gv):
            return Verdict(True, "formula-equivalence")
    if normalize_answer(predicted) == normalize_answer(gold) and normalize_answer(gold):
        return Verdict(True, "string")
    return Verdict(False, None)


# -- evaluation ----------------------------------------------------------------------


@dataclass(frozen=True)
class CaseResult:
    case_id: str
    correct: bool
    matched_by: Optional[str]
    tokens: int
    latency_s: Optional[float]
    answer: Optional[str]
    gold: str
    provenance_aligned: bool
    chunks: tuple[str, ...]
    reason: Optional[str] = None


@dataclass
class EvalReport:
    n_cases: int
    answer_accuracy: float
    mean_tokens: float
    mean_latency_s: Optional[float]
    per_case: list[CaseResult]
    mock: bool = False
    label: str = ""
    partial: bool = False

    def to_dict(self) -> dict:
        """JSON form. Mock runs null every latency so reports are reproducible."""
        cases = []
        for c in self.per_case:
            d = asdict(c)
            d["chunks"] = list(c.chunks)
            if self.mock:
                d["latency_s"] = None
            cases.append(d)
        return {
            "label": self.label,
            "mock": self.mock,
            "partial": self.partial,
            "n_cases": self.n_cases,
            "answer_accuracy": self.answer_accuracy,
            "mean_tokens": self.mean_tokens,
            "mean_latency_s": None if self.mock else self.mean_latency_s,
            "per_case": cases,
        }


class EvalAborted(RuntimeError):
    """An infrastructure error stopped the run; ``report`` holds finished cases."""

    def __init__(self, message: str, report: EvalReport) -> None:
        super().__init__(message)
        self.report = report


def _aggregate(results: list[CaseResult], mock: bool, label: str, partial: bool = False) -> EvalReport:
    results = sorted(results, key=lambda r: r.case_id)
    n = len(results)
    lat = [r.latency_s for r in results if r.latency_s is not None]
    return EvalReport(
        n_cases=n,
        answer_accuracy=(sum(r.correct for r in results) / n) if n else 0.0,
        mean_tokens=(sum(r.tokens for r in results) / n) if n else 0.0,
        mean_latency_s=(sum(lat) / len(lat)) if lat else None,
        per_case=results,
        mock=mock,
        label=label,
        partial=partial,
    )


def provenance_aligned(hits: Sequence[FusedHit], index: HybridIndex, provenance: Sequence[Provenance]) -> bool:
    """True when a hit covers a provenance cell or range; image provenance needs the named image unit."""
    targets_cells: list[CellAddress] = []
    targets_ranges: list[CellRange] = []
    images: set[str] = set()
    for p in provenance:
        if p.kind == "cell":
            targets_cells.append(p.cell)
        elif p.kind == "range":
            targets_ranges.append(p.range)
        elif p.kind == "image":
            images.add(p.image_id)
        else:
            for ref in _formula_refs(p.text):
                (targets_ranges if isinstance(ref, CellRange) else targets_cells).append(ref)
    for h in hits:
        unit = index.unit(h.unit_id)
        if unit.kind == "image":
            if unit.image_ref in images or unit.image_ref.rpartition("::")[2] in images:
                return True
            continue
        span = parse_range(unit.span, unit.sheet)
        if any(unit.covers(c) for c in targets_cells):
            return True
        for r in targets_ranges:
            if (
                r.sheet.casefold() == span.sheet.casefold()
                and r.min_col <= span.max_col
                and span.min_col <= r.max_col
                and r.min_row <= span.max_row
                and span.min_row <= r.max_row
            ):
                return True
    return False


def _formula_refs(text: str) -> list:
    out: list = []
    try:
        node = parse_formula(text, None)
    except FormulaError:
        return out

    def walk(n) -> None:
        kind = n[0]
        if kind == "ref":
            out.append(CellAddress(n[1], n[3], n[2]))
        elif kind == "range":
            out.append(CellRange(n[1], n[3], n[2], n[5], n[4]))
        elif kind == "col":
            out.append(CellRange(n[1], n[2], 1, n[3], 1048576))
        elif kind == "neg":
            walk(n[1])
        elif kind == "bin":
            walk(n[2])
            walk(n[3])
        elif kind == "call":
            for a in n[2]:
                walk(a)

    walk(node)
    return out


def run_eval(
    index: HybridIndex,
    cases: Sequence[BenchCase],
    embedder: Embedder,
    client: AnswerClient,
    cfg: RetrievalConfig = RetrievalConfig(),
    workbook: Optional[Workbook] = None,
    concurrency: int = 1,
    label: str = "",
) -> EvalReport:
    """retrieve, compose, generate, parse and score every case.

    Parse failures count as wrong answers. Any other generation error is
    treated as infrastructure failure and raises :class:`EvalAborted`.
    """
    if not cases:
        raise ValueError("empty case set")
    mock = bool(getattr(client, "is_mock", False))

    def one(case: BenchCase) -> CaseResult:
        hits = retrieve(index, case.question, embedder, cfg)
        bundle = compose_prompt(case.question, hits, index.unit, index.images)
        aligned = provenance_aligned(hits, index, case.provenance)
        chunks = tuple(h.unit_id for h in hits)
        try:
            ans = generate(bundle, client)
        except AnswerParseError as exc:
            return CaseResult(
                case.case_id, False, None, bundle.token_estimate, exc.latency_s, None,
                case.gold_answer, aligned, chunks, f"parse error: {exc}",
            )
        verdict = check_answer(ans.answer, case.gold_answer, case.provenance, workbook)
        return CaseResult(
            case.case_id, verdict.correct, verdict.matched_by, bundle.token_estimate, ans.latency_s,
            ans.answer, case.gold_answer, aligned, chunks,
        )

    results: list[CaseResult] = []
    try:
        if concurrency <= 1:
            for case in cases:
                results.append(one(case))
        else:
            with ThreadPoolExecutor(max_workers=concurrency) as pool:
                for res in pool.map(one, cases):
                    results.append(res)
    except Exception as exc:  # noqa: BLE001 - wrapped with partial results
        raise EvalAborted(f"evaluation aborted: {exc}", _aggregate(results, mock, label, partial=True)) from exc
    return _aggregate(results, mock, label)


def render_table(reports: Sequence[EvalReport]) -> str:
    rows = [("Run", "Accuracy", "Mean Tokens", "Latency(s)")]
    for r in reports:
        latency = "n/a (mock)" if r.mock else ("-" if r.mean_latency_s is None else f"{r.mean_latency_s:.2f}")
        rows.append((r.label or "-", f"{r.answer_accuracy:.3f}", f"{r.mean_tokens:,.2f}", latency))
    widths = [max(len(row[i]) for row in rows) for i in range(4)]
    lines = []
    for j, row in enumerate(rows):
        lines.append(" | ".join(cell.ljust(widths[i]) if i == 0 else cell.rjust(widths[i]) for i, cell in enumerate(row)))
        if j == 0:
            lines.append("-+-".join("-" * w for w in widths))
    return "\n".join(lines)


def write_report(report: EvalReport, out_dir: str | Path, stem: str = "report") -> tuple[Path, Path]:
    """Write ``<stem>.json`` and ``<stem>.txt`` (the table) and return both paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jpath, tpath = out / f"{stem}.json", out / f"{stem}.txt"
    jpath.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tpath.write_text(render_table([report]) + "\n", encoding="utf-8")
    return jpath, tpath


# -- synthetic generation -----------------------------------------------------------

_REGIONS = ("North", "South", "East", "West", "Central", "Coastal", "Inland", "Metro")
_CATEGORIES = ("Hardware", "Software", "Services", "Logistics", "Training", "Licensing", "Support", "Consulting")
_MEMOS = ("routine entry", "month end accrual", "vendor invoice", "adjustment", "recurring charge",
          "quarterly true up", "rebate applied", "standard terms")
_SHEET_NAMES = ("Sales", "Costs", "Inventory", "Payroll", "Projects")
_TRENDS = ("Increasing", "Decreasing", "Flat", "Volatile")
DATA_HEADERS = ("Amount", "Ref", "Region", "Category", "Qty", "Memo")


@dataclass(frozen=True)
class GenSpec:
    tier: str = "easy"
    n_sheets: Optional[int] = None
    n_rows: Optional[int] = None
    n_images: int = 3
    n_cross_sheet_formulas: int = 1
    n_questions: int = 8
    seed: int = 0
    domain: str = "finance"

    def __post_init__(self) -> None:
        if self.tier not in TIER_BOUNDS:
            raise ValueError(f"unknown tier {self.tier!r}")
        rows, sheets = self.resolved()
        lo, hi = TIER_BOUNDS[self.tier]
        if not lo <= rows <= hi:
            raise ValueError(f"{self.tier} tier needs {lo}..{hi} rows, got {rows}")
        if not 1 <= sheets <= 5:
            raise ValueError("n_sheets must be 1..5")
        if rows < 2 * sheets:
            raise ValueError("too few rows for the number of sheets")
        if self.n_images < 0 or self.n_questions < 1 or self.n_cross_sheet_formulas < 1:
            raise ValueError("need n_images >= 0, n_questions >= 1, n_cross_sheet_formulas >= 1")

    def resolved(self) -> tuple[int, int]:
        d_rows, d_sheets = _TIER_DEFAULTS[self.tier]
        return (self.n_rows if self.n_rows is not None else d_rows,
                self.n_sheets if self.n_sheets is not None else d_sheets)


@dataclass(frozen=True)
class Plant:
    question_id: str
    reasoning_type: str
    token: str
    gold_unit_ids: tuple[str, ...]
    gold_cells: tuple[tuple[str, Any], ...]
    gold_image: Optional[str] = None

    def to_json(self) -> str:
        rec = {
            "question_id": self.question_id,
            "reasoning_type": self.reasoning_type,
            "token": self.token,
            "gold_unit_ids": list(self.gold_unit_ids),
            "gold_cells": [{"ref": ref, "value": v} for ref, v in self.gold_cells],
        }
        if self.gold_image is not None:
            rec["gold_image"] = self.gold_image
        return json.dumps(rec, sort_keys=True)


def plant_map_path(workbook_path: str | Path) -> Path:
    p = Path(workbook_path)
    return p.with_name(p.stem + ".plants.jsonl")


def load_plant_map(path: str | Path) -> list[Plant]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        out.append(
            Plant(
                rec["question_id"],
                rec["reasoning_type"],
                rec["token"],
                tuple(rec["gold_unit_ids"]),
                tuple((c["ref"], c["value"]) for c in rec["gold_cells"]),
                rec.get("gold_image"),
            )
        )
    return out


def _chart_png(rng: random.Random, trend: str) -> bytes:
    w, h, bars = 48, 32, 8
    if trend == "Increasing":
        heights = [4 + 3 * i for i in range(bars)]
    elif trend == "Decreasing":
        heights = [4 + 3 * (bars - 1 - i) for i in range(bars)]
    elif trend == "Flat":
        heights = [14] * bars
    else:
        heights = [rng.randint(3, 28) for _ in range(bars)]
    color = (rng.randint(20, 200), rng.randint(20, 200), rng.randint(20, 200))
    white = (255, 255, 255)
    pixels = []
    for y in range(h):
        row = []
        for x in range(w):
            b = x // (w // bars)
            inside = x % (w // bars) != 0 and (h - y) <= heights[b]
            row.append(color if inside else white)
        pixels.append(row)
    return encode_png(pixels)


def _token(rng: random.Random, used: set[str]) -> str:
    alphabet = "abcdefghijklmnopqrstuvwxyz0123456789"
    while True:
        tok = "zq" + "".join(rng.choice(alphabet) for _ in range(6))
        if tok not in used:
            used.add(tok)
            return tok


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def generate_bench(spec: GenSpec, path: str | Path) -> Path:
    """Write a synthetic benchmark workbook to ``path`` plus its plant map.

    Deterministic in ``spec``: the same spec always yields the same bytes.
    """
    path = Path(path)
    rng = random.Random(spec.seed)
    total_rows, n_sheets = spec.resolved()
    names = list(_SHEET_NAMES[:n_sheets])
    base, extra = divmod(total_rows, n_sheets)
    sheet_rows = [base + (1 if i < extra else 0) for i in range(n_sheets)]  # includes header

    used_tokens: set[str] = set()
    data: dict[str, list[list[Any]]] = {}
    for name, n in zip(names, sheet_rows):
        rows: list[list[Any]] = [list(DATA_HEADERS)]
        for i in range(2, n + 1):
            rows.append([
                round(rng.uniform(50, 50000), 2),
                f"INV-{rng.randrange(10**6):06d}",
                rng.choice(_REGIONS),
                rng.choice(_CATEGORIES),
                rng.randint(1, 500),
                rng.choice(_MEMOS),
            ])
        data[name] = rows

    # question types in a fixed cycle, falling back to lookup when a resource runs out
    cycle = ("lookup", "aggregation", "cross-sheet", "image", "trend")
    images_left, cross_left = spec.n_images, spec.n_cross_sheet_formulas
    types = []
    for i in range(spec.n_questions):
        t = cycle[i % len(cycle)]
        if t in ("image", "trend"):
            if images_left == 0:
                t = "lookup"
            else:
                images_left -= 1
        elif t == "cross-sheet":
            if cross_left == 0:
                t = "aggregation"
            else:
                cross_left -= 1
        types.append(t)

    taken: set[tuple[str, int]] = set()
    cons_rows: list[list[Any]] = [["Value", "Key", "Description"]]
    pictures: dict[str, list[Picture]] = {n: [] for n in names}
    questions: list[list[Any]] = [list(QUESTION_COLUMNS)]
    plants: list[Plant] = []
    image_no = 0
    cross_made = 0

    def amount_range(sheet: str) -> tuple[int, int, float]:
        n = len(data[sheet])
        a = rng.randint(2, n)
        b = rng.randint(a, min(n, a + rng.randint(0, 400)))
        vals = [data[sheet][r - 1][0] for r in range(a, b + 1)]
        return a, b, math.fsum(vals)

    def add_cons(formula: str, value: float, key: str, desc: str) -> int:
        cons_rows.append([Formula(formula, value), key, desc])
        return len(cons_rows)

    for qi, rtype in enumerate(types, start=1):
        qid = f"Q{qi:03d}"
        tok = _token(rng, used_tokens)
        if rtype == "lookup":
            while True:
                sheet = rng.choice(names)
                n = len(data[sheet])
                if n < 2:
                    continue
                r = rng.randint(2, n)
                if (sheet, r) not in taken:
                    taken.add((sheet, r))
                    break
            row = data[sheet][r - 1]
            row[1] = tok
            row[5] = f"audit flag {tok}"
            ref = f"{quote_sheet(sheet)}!A{r}"
            questions.append([f"Which amount carries audit flag {tok}?", rtype, ref, _fmt(row[0])])
            plants.append(Plant(qid, rtype, tok, (sheet_unit_id(sheet, "row", str(r)),), ((ref, row[0]),)))
        elif rtype in ("aggregation", "cross-sheet"):
            if rtype == "cross-sheet" and len(names) >= 2:
                s1, s2 = rng.sample(names, 2)
                a1, b1, _ = amount_range(s1)
                a2, b2, _ = amount_range(s2)
                formula = f"SUM({quote_sheet(s1)}!A{a1}:A{b1}, {quote_sheet(s2)}!A{a2}:A{b2})"
                value = _sum_two(data, s1, a1, b1, s2, a2, b2)
                question, desc = f"What is the combined value for key {tok}?", f"{tok} combined total"
                cross_made += 1
            else:
                s1 = rng.choice(names)
                a1, b1, value = amount_range(s1)
                formula = f"SUM({quote_sheet(s1)}!A{a1}:A{b1})"
                question, desc = f"What is the value for key {tok}?", f"{tok} subtotal"
            r = add_cons(formula, value, tok, desc)
            cref = f"{CONSOLIDATION_SHEET}!A{r}"
            questions.append([question, rtype, f"={formula}, {cref}", _fmt(value)])
            plants.append(Plant(qid, rtype, tok, (sheet_unit_id(CONSOLIDATION_SHEET, "row", str(r)),), ((cref, value),)))
        else:
            image_no += 1
            img_id = f"Chart_{image_no:03d}"
            sheet = names[(image_no - 1) % len(names)]
            if rtype == "trend":
                keyword = rng.choice(_TRENDS)
                caption = f"{keyword} trend in monthly totals, chart {tok}"
                question = f"What trend does the chart marked {tok} show?"
            else:
                keyword = rng.choice(_REGIONS)
                caption = f"{keyword} leads regional revenue in chart {tok}"
                question = f"Which region leads in the chart marked {tok}?"
            png = _chart_png(rng, keyword if rtype == "trend" else "Volatile")
            slot = len(pictures[sheet])
            pictures[sheet].append(Picture(img_id, png, len(DATA_HEADERS) + 2, 2 + 15 * slot, caption))
            questions.append([question, rtype, f"Image ID: {img_id}", keyword])
            plants.append(Plant(qid, rtype, tok, (sheet_unit_id(sheet, "img", img_id),), (), img_id))

    # remaining images and cross-sheet formulas without questions
    while image_no < spec.n_images:
        image_no += 1
        img_id = f"Chart_{image_no:03d}"
        sheet = names[(image_no - 1) % len(names)]
        keyword = rng.choice(_TRENDS)
        slot = len(pictures[sheet])
        pictures[sheet].append(
            Picture(img_id, _chart_png(rng, keyword), len(DATA_HEADERS) + 2, 2 + 15 * slot, f"{keyword} monthly totals")
        )
    while cross_made < spec.n_cross_sheet_formulas:
        cross_made += 1
        s1, s2 = (rng.sample(names, 2) if len(names) >= 2 else (names[0], names[0]))
        a1, b1, _ = amount_range(s1)
        a2, b2, _ = amount_range(s2)
        formula = f"SUM({quote_sheet(s1)}!A{a1}:A{b1}, {quote_sheet(s2)}!A{a2}:A{b2})"
        add_cons(formula, _sum_two(data, s1, a1, b1, s2, a2, b2), f"CONS-{cross_made:03d}", "period subtotal")

    meta = [
        ["Field", "Value"],
        ["Title", f"Synthetic {spec.domain} workbook"],
        ["Domain", spec.domain],
        ["Tier", spec.tier],
        ["Seed", spec.seed],
        ["Data sheets", ", ".join(names)],
        ["Data rows", total_rows],
        ["Images", spec.n_images],
        ["Questions", spec.n_questions],
        ["Generator", "frtr synthetic generator"],
    ]
    sheets = [SheetData(METADATA_SHEET, meta)]
    sheets += [SheetData(n, data[n], pictures[n]) for n in names]
    sheets.append(SheetData(CONSOLIDATION_SHEET, cons_rows))
    sheets.append(SheetData(QUESTIONS_SHEET, questions))
    path.parent.mkdir(parents=True, exist_ok=True)
    write_xlsx(path, sheets)
    plant_map_path(path).write_text("".join(p.to_json() + "\n" for p in plants), encoding="utf-8")
    return path


def _sum_two(data, s1: str, a1: int, b1: int, s2: str, a2: int, b2: int) -> float:
    vals = [data[s1][r - 1][0] for r in range(a1, b1 + 1)] + [data[s2][r - 1][0] for r in range(a2, b2 + 1)]
    return math.fsum(vals)
