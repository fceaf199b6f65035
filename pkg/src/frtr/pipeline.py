"""End-to-end plumbing shared by the CLI, the HTTP service and the demos."""

from __future__ import annotations

import logging
import time
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import AppConfig, GeneratorSpec
from .decompose import DecomposeConfig, Unit, decompose_workbook
from .embedding import Embedder, make_embedder
from .index import FusedHit, HybridIndex, RetrievalConfig, build_index, retrieve
from .reasoner import (
    ChatClientSpec,
    MockAnswerClient,
    ModelAnswer,
    PromptBundle,
    RemoteChatClient,
    compose_prompt,
    generate,
)
from .workbook import ImageAsset, Workbook
from .xlsx import ingest_workbook

log = logging.getLogger(__name__)

EMBED_BATCH = 16384


@dataclass(frozen=True)
class IndexBuild:
    index: HybridIndex
    units_by_kind: dict[str, int]
    seconds: float


def _prefixed(units: list[Unit], images: list[ImageAsset], prefix: str) -> tuple[list[Unit], dict[str, ImageAsset]]:
    if not prefix:
        return units, {img.id: img for img in images}
    out = [
        replace(u, unit_id=prefix + u.unit_id, image_ref=None if u.image_ref is None else prefix + u.image_ref)
        for u in units
    ]
    return out, {prefix + img.id: img for img in images}


def embed_units(units: Sequence[Unit], images: dict[str, ImageAsset], embedder: Embedder) -> np.ndarray:
    """Embed in fixed-size batches to bound peak memory."""
    if not units:
        return np.zeros((0, embedder.dim), np.float32)
    parts = [embedder.embed_batch(units[i : i + EMBED_BATCH], images) for i in range(0, len(units), EMBED_BATCH)]
    return np.concatenate(parts, axis=0)


def index_workbooks(
    workbooks: Sequence[Workbook],
    embedder: Embedder,
    decompose: DecomposeConfig = DecomposeConfig(),
    embedder_info: Optional[dict] = None,
) -> IndexBuild:
    """Decompose, embed and index one or more parsed workbooks.

    With several workbooks every unit id and image id gets a ``<stem>::``
    prefix so ids stay unique across files.
    """
    t0 = time.perf_counter()
    all_units: list[Unit] = []
    all_images: dict[str, ImageAsset] = {}
    stems: Counter = Counter()
    for wb in workbooks:
        prefix = ""
        if len(workbooks) > 1:
            stem = Path(wb.source_path).stem
            stems[stem] += 1
            prefix = f"{stem}::" if stems[stem] == 1 else f"{stem}~{stems[stem]}::"
        units, images = _prefixed(decompose_workbook(wb, decompose), wb.images, prefix)
        all_units.extend(units)
        all_images.update(images)
    vectors = embed_units(all_units, all_images, embedder)
    index = build_index(
        all_units,
        vectors,
        all_images,
        embedder_info=embedder_info or {"kind": getattr(embedder, "kind", "custom"), "dim": embedder.dim},
        sources=[wb.source_path for wb in workbooks],
    )
    return IndexBuild(index, index.stats["units_by_kind"], time.perf_counter() - t0)


def index_paths(paths: Sequence[str | Path], cfg: AppConfig, embedder: Optional[Embedder] = None) -> IndexBuild:
    embedder = embedder or make_embedder(cfg.embedder)
    workbooks = []
    for p in paths:
        log.info("ingesting %s", p)
        workbooks.append(ingest_workbook(p))
    return index_workbooks(workbooks, embedder, cfg.decompose, cfg.embedder.public())


def make_client(spec: GeneratorSpec, index: HybridIndex):
    if spec.kind == "mock":
        return MockAnswerClient(index.unit)
    return RemoteChatClient(
        ChatClientSpec(
            endpoint=spec.endpoint,
            api_key=spec.api_key,
            model=spec.model,
            timeout_s=spec.timeout_s,
            max_retries=spec.max_retries,
            concurrency=spec.concurrency,
        )
    )


def chunk_records(hits: Sequence[FusedHit], index: HybridIndex) -> list[dict]:
    """The chunk list shown by ``query --dry-run`` and returned by ``/retrieve``."""
    out = []
    for h in hits:
        u = index.unit(h.unit_id)
        out.append(
            {
                "unit_id": h.unit_id,
                "score": h.rrf_score,
                "source": h.source,
                "sheet": u.sheet,
                "kind": u.kind,
                "span": u.span,
                "vector_rank": h.vector_rank,
                "lexical_rank": h.lexical_rank,
            }
        )
    return out


@dataclass
class QueryResult:
    question: str
    hits: list[FusedHit]
    bundle: PromptBundle
    answer: Optional[ModelAnswer] = None

    def to_dict(self, index: HybridIndex, include_prompt: bool = False) -> dict:
        rec = {
            "question": self.question,
            "chunks": chunk_records(self.hits, index),
            "tokens": self.bundle.token_estimate,
            "answer": None,
            "reasoning": None,
            "latency_s": None,
        }
        if self.answer is not None:
            rec.update(answer=self.answer.answer, reasoning=self.answer.reasoning, latency_s=self.answer.latency_s)
        if include_prompt:
            rec["prompt"] = self.bundle.text
            rec["attachments"] = [{"unit_id": a.unit_id, "media_type": a.media_type, "bytes": len(a.data)}
                                  for a in self.bundle.attachments]
        return rec


class Runtime:
    """A loaded index plus the embedder and answer client that serve it."""

    def __init__(self, index: HybridIndex, embedder: Embedder, client, cfg: RetrievalConfig) -> None:
        self.index = index
        self.embedder = embedder
        self.client = client
        self.cfg = cfg

    @classmethod
    def from_config(cls, index: HybridIndex, cfg: AppConfig) -> "Runtime":
        return cls(index, make_embedder(cfg.embedder), make_client(cfg.generator, index), cfg.retrieval)

    def retrieve(self, question: str, k_final: Optional[int] = None) -> list[FusedHit]:
        cfg = self.cfg if k_final is None else replace(self.cfg, k_final=k_final)
        return retrieve(self.index, question, self.embedder, cfg)

    def query(self, question: str, k_final: Optional[int] = None, dry_run: bool = False) -> QueryResult:
        hits = self.retrieve(question, k_final)
        bundle = compose_prompt(question, hits, self.index.unit, self.index.images)
        result = QueryResult(question, hits, bundle)
        if not dry_run:
            result.answer = generate(bundle, self.client)
        return result
