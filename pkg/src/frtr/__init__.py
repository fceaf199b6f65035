"""Spreadsheet question answering by hybrid retrieval over row, column, window and image units."""

from .bench import (
    BenchCase,
    EvalReport,
    GenSpec,
    check_answer,
    generate_bench,
    load_bench,
    run_eval,
)
from .config import AppConfig, load_config
from .decompose import DecomposeConfig, Unit, decompose_sheet, decompose_workbook, window_size
from .embedding import EmbedderSpec, HashingEmbedder, RemoteEmbedder, make_embedder
from .formula import eval_formula
from .index import (
    FusedHit,
    HybridIndex,
    RetrievalConfig,
    build_index,
    fuse_rrf,
    load_index,
    retrieve,
    save_index,
    search_dense,
    search_lexical,
)
from .pipeline import Runtime, index_workbooks
from .reasoner import (
    MockAnswerClient,
    ModelAnswer,
    PromptBundle,
    RemoteChatClient,
    compose_prompt,
    estimate_tokens,
    format_chunk,
    generate,
    parse_answer,
)
from .workbook import Cell, CellAddress, CellRange, ImageAsset, Sheet, Workbook, parse_a1, render_a1
from .xlsx import IngestOptions, ingest_workbook, list_sheets

__version__ = "0.1.0"

__all__ = [
    "AppConfig",
    "BenchCase",
    "Cell",
    "CellAddress",
    "CellRange",
    "DecomposeConfig",
    "EmbedderSpec",
    "EvalReport",
    "FusedHit",
    "GenSpec",
    "HashingEmbedder",
    "HybridIndex",
    "ImageAsset",
    "IngestOptions",
    "MockAnswerClient",
    "ModelAnswer",
    "PromptBundle",
    "RemoteChatClient",
    "RemoteEmbedder",
    "RetrievalConfig",
    "Runtime",
    "Sheet",
    "Unit",
    "Workbook",
    "build_index",
    "check_answer",
    "compose_prompt",
    "decompose_sheet",
    "decompose_workbook",
    "estimate_tokens",
    "eval_formula",
    "format_chunk",
    "fuse_rrf",
    "generate",
    "generate_bench",
    "index_workbooks",
    "ingest_workbook",
    "list_sheets",
    "load_bench",
    "load_config",
    "load_index",
    "make_embedder",
    "parse_a1",
    "parse_answer",
    "render_a1",
    "retrieve",
    "run_eval",
    "save_index",
    "search_dense",
    "search_lexical",
    "window_size",
]
