"""HTTP query service.

Endpoints::

    GET  /health    {status, index_version, units_by_kind, n_units}
    POST /query     {question, k_final?, dry_run?}
                    -> {answer, reasoning, chunks, tokens, latency_s[, prompt]}
    POST /retrieve  {question, k?} -> {question, chunks}
    POST /reload    reload the index from disk; swapped in only once loaded

Status codes: 400 malformed body, 422 empty question, 502 generator
failure (with ``retryable`` and ``attempts``), 503 while no index is loaded.
"""

from __future__ import annotations

import logging
import threading
from pathlib import Path
from typing import Callable, Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool

from .config import AppConfig
from .index import FORMAT_VERSION, HybridIndex, load_index
from .pipeline import Runtime, chunk_records
from .reasoner import AnswerParseError, GenerationError

log = logging.getLogger(__name__)


class ServiceState:
    """Holds the current runtime; readers take a reference, reload swaps it."""

    def __init__(self, cfg: AppConfig, loader: Optional[Callable[[], HybridIndex]] = None) -> None:
        self.cfg = cfg
        self.loader = loader or (lambda: load_index(Path(cfg.index_dir)))
        self.runtime: Optional[Runtime] = None
        self.error: Optional[str] = None
        self._lock = threading.Lock()

    def load(self) -> None:
        try:
            rt = Runtime.from_config(self.loader(), self.cfg)
        except Exception as exc:  # noqa: BLE001 - reported through /health
            log.error("index load failed: %s", exc)
            with self._lock:
                self.error = str(exc)
            return
        with self._lock:
            self.runtime, self.error = rt, None

    def load_in_background(self) -> threading.Thread:
        t = threading.Thread(target=self.load, name="frtr-index-load", daemon=True)
        t.start()
        return t


class _BadRequest(Exception):
    def __init__(self, status: int, message: str) -> None:
        super().__init__(message)
        self.status = status


async def _body(request: Request) -> dict:
    try:
        body = await request.json()
    except Exception:  # noqa: BLE001 - any decode failure is a client error
        raise _BadRequest(400, "body must be a JSON object") from None
    if not isinstance(body, dict):
        raise _BadRequest(400, "body must be a JSON object")
    q = body.get("question")
    if not isinstance(q, str):
        raise _BadRequest(400, '"question" must be a string')
    if not q.strip():
        raise _BadRequest(422, '"question" must not be empty')
    return body


def _int_field(body: dict, name: str, upper: int) -> Optional[int]:
    v = body.get(name)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, int) or not 1 <= v <= upper:
        raise _BadRequest(400, f'"{name}" must be an integer in 1..{upper}')
    return v


def create_app(cfg: AppConfig, loader: Optional[Callable[[], HybridIndex]] = None, background: bool = True) -> FastAPI:
    state = ServiceState(cfg, loader)
    app = FastAPI(title="frtr", version=FORMAT_VERSION)
    app.state.frtr = state
    if background:
        state.load_in_background()
    else:
        state.load()

    def runtime() -> Runtime:
        rt = state.runtime
        if rt is None:
            raise _BadRequest(503, "index not loaded" + (f": {state.error}" if state.error else " yet"))
        return rt

    @app.exception_handler(_BadRequest)
    async def _bad(_: Request, exc: _BadRequest):
        return JSONResponse({"error": str(exc)}, status_code=exc.status)

    @app.get("/health")
    def health():
        rt = state.runtime
        if rt is None:
            return JSONResponse(
                {"status": "loading" if state.error is None else "error", "error": state.error}, status_code=503
            )
        stats = rt.index.stats
        return {
            "status": "ok",
            "index_version": FORMAT_VERSION,
            "n_units": stats["n_units"],
            "units_by_kind": stats["units_by_kind"],
        }

    @app.post("/retrieve")
    async def retrieve_ep(request: Request):
        body = await _body(request)
        rt = runtime()
        k = _int_field(body, "k", rt.cfg.k_vector + rt.cfg.k_lexical)
        hits = await run_in_threadpool(rt.retrieve, body["question"], k)
        return {"question": body["question"], "chunks": chunk_records(hits, rt.index)}

    @app.post("/query")
    async def query_ep(request: Request):
        body = await _body(request)
        rt = runtime()
        k = _int_field(body, "k_final", rt.cfg.k_vector + rt.cfg.k_lexical)
        dry_run = body.get("dry_run", False)
        if not isinstance(dry_run, bool):
            raise _BadRequest(400, '"dry_run" must be a boolean')
        try:
            result = await run_in_threadpool(rt.query, body["question"], k, dry_run)
        except AnswerParseError as exc:
            return JSONResponse(
                {"error": f"unparseable model reply: {exc}", "raw": exc.raw, "retryable": True, "attempts": 1},
                status_code=502,
            )
        except GenerationError as exc:
            return JSONResponse(
                {"error": str(exc), "retryable": exc.retryable, "attempts": exc.attempts, "kind": type(exc).__name__},
                status_code=502,
            )
        return result.to_dict(rt.index, include_prompt=dry_run)

    @app.post("/reload")
    def reload_ep():
        state.load()
        if state.error is not None:
            return JSONResponse({"status": "error", "error": state.error}, status_code=500)
        return {"status": "ok"}

    return app
