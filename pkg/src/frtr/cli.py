"""``frtr`` command line.

Subcommands: ``index``, ``query``, ``eval``, ``generate``, ``sheets``, ``serve``.
Every subcommand accepts ``--config FILE`` and ``--json``. Credentials come
only from environment variables (see :mod:`frtr.config`).

Exit codes: 0 success, 1 error, 2 usage, 3 retrieval returned nothing,
4 generation failed, 5 the model reply could not be parsed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .bench import (
    BenchSchemaError,
    EvalAborted,
    GenSpec,
    cases_from_workbook,
    generate_bench,
    render_table,
    run_eval,
    write_report,
)
from .config import AppConfig, ConfigError, load_config
from .embedding import EmbeddingError, make_embedder
from .formula import FormulaError
from .index import IndexStoreError, load_index, save_index
from .pipeline import Runtime, chunk_records, index_paths, index_workbooks, make_client
from .reasoner import AnswerParseError, GenerationError, generate
from .xlsx import IngestError, ingest_workbook, list_sheets

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_EMPTY, EXIT_GENERATION, EXIT_PARSE = 0, 1, 2, 3, 4, 5

log = logging.getLogger("frtr")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_ERROR) -> None:
        super().__init__(message)
        self.code = code


def _emit(obj, as_json: bool, text: str) -> None:
    if as_json:
        print(json.dumps(obj, indent=2, sort_keys=True))
    else:
        print(text)


def _load(cfg: AppConfig, index_dir: Optional[str]):
    d = Path(index_dir or cfg.index_dir)
    if not (d / "manifest.json").is_file():
        raise CliError(f"no index at {d} (run `frtr index` first)")
    index = load_index(d)
    built_with = index.embedder.get("kind")
    if built_with and built_with != cfg.embedder.kind:
        raise CliError(f"index was built with embedder {built_with!r} but {cfg.embedder.kind!r} is configured")
    return index


# -- subcommands ------------------------------------------------------------------


def cmd_index(args, cfg: AppConfig) -> int:
    out_dir = Path(args.index_dir or cfg.index_dir)
    build = index_paths(args.workbooks, cfg)
    save_index(build.index, out_dir, extra={"decompose": _asdict(cfg.decompose), "retrieval": _asdict(cfg.retrieval)})
    rec = {
        "index_dir": str(out_dir),
        "units_by_kind": build.units_by_kind,
        "n_units": len(build.index),
        "n_images": len(build.index.images),
        "build_seconds": round(build.seconds, 3),
    }
    kinds = ", ".join(f"{k}={v}" for k, v in build.units_by_kind.items())
    _emit(rec, args.json, f"indexed {len(args.workbooks)} workbook(s) into {out_dir}\n"
                          f"units: {len(build.index)} ({kinds})\nbuild time: {build.seconds:.2f}s")
    return EXIT_OK


def cmd_query(args, cfg: AppConfig) -> int:
    if args.k_final is not None:
        cfg = replace(cfg, retrieval=replace(cfg.retrieval, k_final=args.k_final))
    index = _load(cfg, args.index_dir)
    rt = Runtime.from_config(index, cfg)
    result = rt.query(args.question, dry_run=True)
    hits = result.hits
    if not hits:
        raise CliError("retrieval returned no chunks", EXIT_EMPTY)
    if args.dry_run:
        rec = result.to_dict(index, include_prompt=True)
        lines = [result.bundle.text, "", f"-- chunks ({len(hits)}), ~{result.bundle.token_estimate} tokens"]
        lines += _chunk_lines(chunk_records(hits, index))
        _emit(rec, args.json, "\n".join(lines))
        return EXIT_OK
    try:
        result.answer = generate(result.bundle, rt.client)
    except AnswerParseError as exc:
        raise CliError(f"could not parse model reply: {exc}\nraw reply:\n{exc.raw}", EXIT_PARSE) from exc
    except GenerationError as exc:
        raise CliError(f"generation failed after {exc.attempts} attempt(s): {exc}", EXIT_GENERATION) from exc
    rec = result.to_dict(index)
    lines = [f"answer: {result.answer.answer}", f"reasoning: {result.answer.reasoning}"]
    if args.show_chunks:
        lines += ["", "provenance:"] + _chunk_lines(rec["chunks"])
    else:
        lines.append("provenance: " + ", ".join(c["unit_id"] for c in rec["chunks"][:3]))
    _emit(rec, args.json, "\n".join(lines))
    return EXIT_OK


def _chunk_lines(chunks: list[dict]) -> list[str]:
    return [
        f"{i:>2}. {c['unit_id']}  score={c['score']:.4f}  source={c['source']}  sheet={c['sheet']}  kind={c['kind']}"
        for i, c in enumerate(chunks, start=1)
    ]


def cmd_eval(args, cfg: AppConfig) -> int:
    out_dir = Path(args.out)
    workbooks = list(args.workbooks)
    for tier in args.generate or []:
        spec = GenSpec(tier=tier, seed=args.seed, n_questions=args.questions)
        path = out_dir / "bench" / f"{tier}-seed{args.seed}.xlsx"
        workbooks.append(str(generate_bench(spec, path)))
    if args.index_dir:
        if len(workbooks) > 1:
            raise CliError("--index-dir evaluates a single workbook")
        index = _load(cfg, args.index_dir)
        if not workbooks:
            if len(index.sources) != 1:
                raise CliError("index covers several workbooks; pass the bench workbook explicitly")
            workbooks = [index.sources[0]]
    if not workbooks:
        raise CliError("nothing to evaluate: pass workbooks, --generate TIER, or --index-dir", EXIT_USAGE)

    embedder = make_embedder(cfg.embedder)
    reports = []
    for wb_path in workbooks:
        wb = ingest_workbook(wb_path)
        try:
            cases = cases_from_workbook(wb)
        except BenchSchemaError as exc:
            raise CliError(str(exc)) from exc
        if not args.index_dir:
            index = index_workbooks([wb], embedder, cfg.decompose, cfg.embedder.public()).index
        label = Path(wb_path).stem
        try:
            report = run_eval(
                index, cases, embedder, make_client(cfg.generator, index), cfg.retrieval,
                workbook=wb, concurrency=args.concurrency or cfg.eval_concurrency, label=label,
            )
        except EvalAborted as exc:
            write_report(exc.report, out_dir, label + ".partial")
            raise CliError(f"{wb_path}: {exc}", EXIT_GENERATION) from exc
        write_report(report, out_dir, label)
        reports.append(report)
    table = render_table(reports)
    (out_dir / "summary.txt").write_text(table + "\n", encoding="utf-8")
    _emit([r.to_dict() for r in reports], args.json, table)
    return EXIT_OK


def cmd_generate(args, cfg: AppConfig) -> int:
    spec = GenSpec(
        tier=args.tier,
        n_sheets=args.sheets,
        n_rows=args.rows,
        n_images=args.images,
        n_cross_sheet_formulas=args.cross,
        n_questions=args.questions,
        seed=args.seed,
    )
    path = generate_bench(spec, args.out)
    rows, sheets = spec.resolved()
    _emit({"path": str(path), "tier": spec.tier, "rows": rows, "sheets": sheets, "questions": spec.n_questions},
          args.json, f"wrote {path} ({spec.tier}, {rows} rows over {sheets} data sheet(s), {spec.n_questions} questions)")
    return EXIT_OK


def cmd_sheets(args, cfg: AppConfig) -> int:
    sheets = list_sheets(args.workbook)
    _emit([{"sheet": n, "rows": r} for n, r in sheets], args.json, "\n".join(f"{n}\t{r}" for n, r in sheets))
    return EXIT_OK


def cmd_serve(args, cfg: AppConfig) -> int:
    import uvicorn

    from .service import create_app

    if args.index_dir:
        cfg = replace(cfg, index_dir=args.index_dir)
    uvicorn.run(create_app(cfg), host=args.host, port=args.port, log_level=cfg.log_level.lower())
    return EXIT_OK


def _asdict(obj) -> dict:
    from dataclasses import asdict

    return asdict(obj)


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (default: $FRTR_CONFIG)")
    common.add_argument("--json", action="store_true", help="machine-readable output")

    p = argparse.ArgumentParser(prog="frtr", description="Spreadsheet retrieval and question answering.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("index", parents=[common], help="build an index from .xlsx files")
    s.add_argument("workbooks", nargs="+")
    s.add_argument("--index-dir")
    s.set_defaults(func=cmd_index)

    s = sub.add_parser("query", parents=[common], help="ask a question against an index")
    s.add_argument("question")
    s.add_argument("--index-dir")
    s.add_argument("--show-chunks", action="store_true")
    s.add_argument("--dry-run", action="store_true", help="print the prompt and chunks; call no model")
    s.add_argument("--k-final", type=int)
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("eval", parents=[common], help="run the benchmark protocol")
    s.add_argument("workbooks", nargs="*", help="benchmark workbooks with a Questions sheet")
    s.add_argument("--index-dir", help="evaluate against a saved index")
    s.add_argument("--generate", action="append", choices=("easy", "medium", "hard"),
                   help="generate a synthetic workbook of this tier first (repeatable)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--questions", type=int, default=8)
    s.add_argument("--concurrency", type=int)
    s.add_argument("--out", default="frtr-eval", help="report directory")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("generate", parents=[common], help="write a synthetic benchmark workbook")
    s.add_argument("--tier", choices=("easy", "medium", "hard"), default="easy")
    s.add_argument("--rows", type=int)
    s.add_argument("--sheets", type=int)
    s.add_argument("--images", type=int, default=3)
    s.add_argument("--cross", type=int, default=1, help="cross-sheet formulas")
    s.add_argument("--questions", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("sheets", parents=[common], help="list sheets and row counts")
    s.add_argument("workbook")
    s.set_defaults(func=cmd_sheets)

    s = sub.add_parser("serve", parents=[common], help="run the HTTP query service")
    s.add_argument("--index-dir")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    s.set_defaults(func=cmd_serve)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"frtr: config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    logging.basicConfig(level=getattr(logging, cfg.log_level, logging.INFO), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, cfg)
    except CliError as exc:
        print(f"frtr: {exc}", file=sys.stderr)
        return exc.code
    except (IngestError, IndexStoreError, EmbeddingError, FormulaError, BenchSchemaError, ValueError, OSError) as exc:
        print(f"frtr: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
