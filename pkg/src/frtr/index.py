"""Hybrid lexical + dense index with Reciprocal Rank Fusion.

Units are stored in ascending ``unit_id`` order, so a unit's ordinal doubles
as its tie-break key: every ranked list sorts by descending score, then
ascending ordinal.

On-disk layout (format ``frtr-index/1``), one directory:

``manifest.json``
    format version, dim, counts, configs, sources and a sha256 per file.
``units.bin``
    per unit in ordinal order: ``u32`` little-endian byte length, then a
    compact JSON record ``{unit_id, kind, sheet, span, text, image_ref}``.
``postings.bin``
    per term in ascending term order: ``u32`` term byte length, term
    UTF-8 bytes, ``u32`` posting count ``n``, ``n`` x ``u32`` ordinals
    delta-encoded (first absolute), ``n`` x ``u32`` term frequencies.
``vectors.f32``
    ``n_units x dim`` float32 little-endian, row-major by ordinal.
``images.bin``
    per image: ``u32`` header length, JSON header ``{id, media_type,
    caption, anchor, n_bytes}``, then the raw bytes.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .decompose import Unit
from .embedding import Embedder, tokenize
from .workbook import CellAddress, ImageAsset

FORMAT_VERSION = "frtr-index/1"

_U32 = struct.Struct("<I")
_DENSE_BLOCK = 32768


class IndexStoreError(RuntimeError):
    pass


class DimensionMismatchError(IndexStoreError, ValueError):
    pass


class DuplicateUnitError(IndexStoreError, ValueError):
    pass


class EmptyQueryError(IndexStoreError, ValueError):
    pass


class IndexVersionError(IndexStoreError):
    pass


class CorruptIndexError(IndexStoreError):
    pass


@dataclass(frozen=True)
class RetrievalConfig:
    k_rrf: int = 60
    k_vector: int = 20
    k_lexical: int = 20
    k_final: int = 10
    bm25_k1: float = 1.2
    bm25_b: float = 0.75

    def __post_init__(self) -> None:
        for name in ("k_rrf", "k_vector", "k_lexical", "k_final"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.k_final > self.k_vector + self.k_lexical:
            raise ValueError("k_final must be <= k_vector + k_lexical")


@dataclass(frozen=True)
class FusedHit:
    unit_id: str
    rrf_score: float
    vector_rank: Optional[int] = None
    lexical_rank: Optional[int] = None

    @property
    def source(self) -> str:
        if self.vector_rank is not None and self.lexical_rank is not None:
            return "Both"
        return "Vector" if self.vector_rank is not None else "Lexical"

    def to_dict(self) -> dict:
        return {
            "unit_id": self.unit_id,
            "rrf_score": self.rrf_score,
            "vector_rank": self.vector_rank,
            "lexical_rank": self.lexical_rank,
            "source": self.source,
        }


@dataclass(frozen=True)
class Posting:
    ordinals: np.ndarray  # int64, ascending
    tfs: np.ndarray  # int64, >= 1


@dataclass
class HybridIndex:
    """Immutable once built; rebuild to change contents."""

    units: list[Unit]
    vectors: np.ndarray
    postings: dict[str, Posting]
    doc_lengths: np.ndarray
    dim: int
    images: dict[str, ImageAsset] = field(default_factory=dict)
    embedder: dict = field(default_factory=dict)
    sources: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.ordinal = {u.unit_id: i for i, u in enumerate(self.units)}
        self.avg_doc_length = float(self.doc_lengths.mean()) if len(self.units) else 0.0
        self.vectors.setflags(write=False)
        self.doc_lengths.setflags(write=False)

    def __len__(self) -> int:
        return len(self.units)

    def unit(self, unit_id: str) -> Unit:
        return self.units[self.ordinal[unit_id]]

    def __contains__(self, unit_id: str) -> bool:
        return unit_id in self.ordinal

    @property
    def stats(self) -> dict:
        kinds = Counter(u.kind for u in self.units)
        return {
            "n_units": len(self.units),
            "n_terms": len(self.postings),
            "n_images": len(self.images),
            "avg_doc_length": self.avg_doc_length,
            "units_by_kind": {k: kinds.get(k, 0) for k in ("row", "column", "window", "image")},
        }


def build_index(
    units: Sequence[Unit],
    embeddings: np.ndarray | Sequence[np.ndarray],
    images: Optional[Mapping[str, ImageAsset]] = None,
    embedder_info: Optional[dict] = None,
    sources: Sequence[str] = (),
) -> HybridIndex:
    """Index ``units`` with their aligned ``embeddings``."""
    if len(units) != len(embeddings):
        raise ValueError(f"{len(units)} units but {len(embeddings)} embeddings")
    if len(units) == 0:
        dim = int(np.asarray(embeddings).shape[1]) if np.asarray(embeddings).ndim == 2 else 0
        return HybridIndex(
            units=[],
            vectors=np.zeros((0, dim), np.float32),
            postings={},
            doc_lengths=np.zeros(0, np.int64),
            dim=dim,
            images=dict(images or {}),
            embedder=dict(embedder_info or {}),
            sources=list(sources),
        )
    if isinstance(embeddings, np.ndarray) and embeddings.ndim == 2:
        dims = {int(embeddings.shape[1])}
    else:
        dims = {int(np.asarray(e).shape[-1]) for e in embeddings}
    if len(dims) != 1:
        raise DimensionMismatchError(f"embeddings have mixed dims {sorted(dims)}")
    dim = dims.pop()
    order = sorted(range(len(units)), key=lambda i: units[i].unit_id)
    sorted_units = [units[i] for i in order]
    for a, b in zip(sorted_units, sorted_units[1:]):
        if a.unit_id == b.unit_id:
            raise DuplicateUnitError(f"duplicate unit_id {a.unit_id!r}")
    matrix = np.asarray(embeddings, dtype=np.float32)
    vectors = np.ascontiguousarray(matrix[order])

    raw: dict[str, tuple[list[int], list[int]]] = {}
    lengths = np.zeros(len(sorted_units), dtype=np.int64)
    for ordinal, unit in enumerate(sorted_units):
        toks = tokenize(unit.text)
        lengths[ordinal] = len(toks)
        for term, tf in Counter(toks).items():
            entry = raw.get(term)
            if entry is None:
                entry = raw[term] = ([], [])
            entry[0].append(ordinal)
            entry[1].append(tf)
    postings = {
        term: Posting(np.asarray(ords, dtype=np.int64), np.asarray(tfs, dtype=np.int64))
        for term, (ords, tfs) in sorted(raw.items())
    }
    return HybridIndex(
        units=sorted_units,
        vectors=vectors,
        postings=postings,
        doc_lengths=lengths,
        dim=dim,
        images=dict(images or {}),
        embedder=dict(embedder_info or {}),
        sources=list(sources),
    )


def _top_k(scores: np.ndarray, candidates: np.ndarray, k: int) -> np.ndarray:
    """Ordinals of the top ``k`` candidates by (-score, ordinal)."""
    if candidates.size == 0:
        return candidates
    cand_scores = scores[candidates]
    if k < candidates.size:
        kth = np.partition(cand_scores, candidates.size - k)[candidates.size - k]
        keep = cand_scores >= kth
        candidates, cand_scores = candidates[keep], cand_scores[keep]
    order = np.lexsort((candidates, -cand_scores))
    return candidates[order[:k]]


def dense_scores(index: HybridIndex, query_vec: np.ndarray) -> np.ndarray:
    q = np.asarray(query_vec, dtype=np.float64)
    if q.shape != (index.dim,):
        raise DimensionMismatchError(f"query has shape {q.shape}, index dim is {index.dim}")
    out = np.empty(len(index), dtype=np.float64)
    for start in range(0, len(index), _DENSE_BLOCK):
        block = index.vectors[start : start + _DENSE_BLOCK].astype(np.float64)
        # row-wise reduction: BLAS may sum rows in different orders, which
        # would split exact ties between identical vectors
        out[start : start + block.shape[0]] = (block * q).sum(axis=1)
    return out


def search_dense(index: HybridIndex, query_vec: np.ndarray, k: int) -> list[tuple[str, float]]:
    """Exact top-``k`` by dot product (cosine, as vectors are unit-norm)."""
    scores = dense_scores(index, query_vec)
    if len(index) == 0 or k < 1:
        return []
    top = _top_k(scores, np.arange(len(index)), k)
    return [(index.units[i].unit_id, float(scores[i])) for i in top]


def bm25_idf(n_docs: int, df: int) -> float:
    return math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))


def lexical_scores(index: HybridIndex, query: str, k1: float = 1.2, b: float = 0.75) -> tuple[np.ndarray, np.ndarray]:
    """BM25 score array and the ordinals of documents matching any query term.

    Each distinct query term counts once.
    """
    terms = sorted(set(tokenize(query)))
    if not terms:
        raise EmptyQueryError(f"query {query!r} has no searchable tokens")
    n = len(index)
    scores = np.zeros(n, dtype=np.float64)
    touched = np.zeros(n, dtype=bool)
    if n == 0:
        return scores, np.zeros(0, np.int64)
    avgdl = index.avg_doc_length or 1.0
    for term in terms:
        p = index.postings.get(term)
        if p is None:
            continue
        idf = bm25_idf(n, len(p.ordinals))
        tf = p.tfs.astype(np.float64)
        dl = index.doc_lengths[p.ordinals].astype(np.float64)
        scores[p.ordinals] += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * dl / avgdl))
        touched[p.ordinals] = True
    return scores, np.nonzero(touched)[0]


def search_lexical(
    index: HybridIndex, query: str, k: int, k1: float = 1.2, b: float = 0.75
) -> list[tuple[str, float]]:
    """Top-``k`` BM25 matches; IDF is ``ln(1 + (N - n + 0.5) / (n + 0.5))``."""
    scores, candidates = lexical_scores(index, query, k1, b)
    if k < 1:
        return []
    top = _top_k(scores, candidates, k)
    return [(index.units[i].unit_id, float(scores[i])) for i in top]


def rrf_score(ranks: Sequence[Optional[int]], k_rrf: int = 60) -> float:
    return sum(1.0 / (k_rrf + r) for r in ranks if r is not None)


def fuse_rrf(
    vec_list: Sequence[tuple[str, float]],
    lex_list: Sequence[tuple[str, float]],
    cfg: RetrievalConfig = RetrievalConfig(),
) -> list[FusedHit]:
    """Reciprocal Rank Fusion of two rank-sorted lists.

    Only list positions matter; the scores carried in the inputs are ignored.
    A unit missing from one list gets no contribution from it.
    """
    vec_rank = {uid: i for i, (uid, _) in enumerate(vec_list, start=1)}
    lex_rank = {uid: i for i, (uid, _) in enumerate(lex_list, start=1)}
    hits = []
    for uid in vec_rank.keys() | lex_rank.keys():
        vr, lr = vec_rank.get(uid), lex_rank.get(uid)
        hits.append(FusedHit(uid, rrf_score((vr, lr), cfg.k_rrf), vr, lr))
    hits.sort(key=lambda h: (-h.rrf_score, h.unit_id))
    return hits[: cfg.k_final]


def retrieve(
    index: HybridIndex, query: str, embedder: Embedder, cfg: RetrievalConfig = RetrievalConfig()
) -> list[FusedHit]:
    """Dense + BM25 search fused by RRF.

    A query whose tokens all miss the lexicon (or that has none) runs as
    dense-only fusion.
    """
    if len(index) == 0:
        return []
    if embedder.dim != index.dim:
        raise DimensionMismatchError(f"embedder dim {embedder.dim} != index dim {index.dim}")
    dense = search_dense(index, embedder.embed_text(query), cfg.k_vector)
    try:
        lexical = search_lexical(index, query, cfg.k_lexical, cfg.bm25_k1, cfg.bm25_b)
    except EmptyQueryError:
        lexical = []
    return fuse_rrf(dense, lexical, cfg)


# -- persistence -------------------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _unit_record(u: Unit) -> bytes:
    return json.dumps(
        {"unit_id": u.unit_id, "kind": u.kind, "sheet": u.sheet, "span": u.span, "text": u.text, "image_ref": u.image_ref},
        ensure_ascii=False,
        separators=(",", ":"),
        sort_keys=True,
    ).encode("utf-8")


def save_index(index: HybridIndex, directory: str | Path, extra: Optional[dict] = None) -> Path:
    """Write ``index`` to ``directory`` (created if needed)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)

    with open(d / "units.bin", "wb") as fh:
        for u in index.units:
            rec = _unit_record(u)
            fh.write(_U32.pack(len(rec)))
            fh.write(rec)

    with open(d / "postings.bin", "wb") as fh:
        for term in sorted(index.postings):
            p = index.postings[term]
            tb = term.encode("utf-8")
            deltas = np.diff(p.ordinals, prepend=0).astype("<u4")
            fh.write(_U32.pack(len(tb)))
            fh.write(tb)
            fh.write(_U32.pack(len(p.ordinals)))
            fh.write(deltas.tobytes())
            fh.write(p.tfs.astype("<u4").tobytes())

    with open(d / "vectors.f32", "wb") as fh:
        fh.write(np.ascontiguousarray(index.vectors, dtype="<f4").tobytes())

    with open(d / "images.bin", "wb") as fh:
        for image_id in sorted(index.images):
            img = index.images[image_id]
            head = json.dumps(
                {
                    "id": image_id,
                    "asset_id": img.id,
                    "media_type": img.media_type,
                    "caption": img.caption,
                    "anchor": None if img.anchor is None else [img.anchor.sheet, img.anchor.column, img.anchor.row],
                    "n_bytes": len(img.bytes),
                },
                sort_keys=True,
                separators=(",", ":"),
            ).encode("utf-8")
            fh.write(_U32.pack(len(head)))
            fh.write(head)
            fh.write(img.bytes)

    files = ("units.bin", "postings.bin", "vectors.f32", "images.bin")
    manifest = {
        "format": FORMAT_VERSION,
        "dim": index.dim,
        "n_units": len(index),
        "n_terms": len(index.postings),
        "n_images": len(index.images),
        "units_by_kind": index.stats["units_by_kind"],
        "embedder": index.embedder,
        "sources": index.sources,
        "extra": {**index.extra, **(extra or {})},
        "files": {name: {"sha256": _sha256(d / name), "bytes": (d / name).stat().st_size} for name in files},
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return d


def read_manifest(directory: str | Path) -> dict:
    d = Path(directory)
    path = d / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"no index manifest at {path}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorruptIndexError(f"manifest is not valid JSON: {exc}") from exc
    if manifest.get("format") != FORMAT_VERSION:
        raise IndexVersionError(f"index format {manifest.get('format')!r}; this build reads {FORMAT_VERSION!r}")
    return manifest


def load_index(directory: str | Path, verify: bool = True) -> HybridIndex:
    d = Path(directory)
    manifest = read_manifest(d)
    for name, meta in manifest["files"].items():
        path = d / name
        if not path.is_file():
            raise CorruptIndexError(f"missing index file {name}")
        if verify and _sha256(path) != meta["sha256"]:
            raise CorruptIndexError(f"checksum mismatch in {name}")

    units: list[Unit] = []
    buf = (d / "units.bin").read_bytes()
    pos = 0
    try:
        while pos < len(buf):
            (n,) = _U32.unpack_from(buf, pos)
            rec = json.loads(buf[pos + 4 : pos + 4 + n])
            pos += 4 + n
            units.append(Unit(**rec))
    except (struct.error, ValueError, TypeError) as exc:
        raise CorruptIndexError(f"bad unit record at byte {pos}: {exc}") from exc
    n_units = len(units)
    if n_units != manifest["n_units"]:
        raise CorruptIndexError(f"expected {manifest['n_units']} units, read {n_units}")

    postings: dict[str, Posting] = {}
    lengths = np.zeros(n_units, dtype=np.int64)
    buf = (d / "postings.bin").read_bytes()
    pos = 0
    try:
        while pos < len(buf):
            (tlen,) = _U32.unpack_from(buf, pos)
            term = buf[pos + 4 : pos + 4 + tlen].decode("utf-8")
            pos += 4 + tlen
            (count,) = _U32.unpack_from(buf, pos)
            pos += 4
            deltas = np.frombuffer(buf, dtype="<u4", count=count, offset=pos).astype(np.int64)
            pos += 4 * count
            tfs = np.frombuffer(buf, dtype="<u4", count=count, offset=pos).astype(np.int64)
            pos += 4 * count
            ords = np.cumsum(deltas)
            postings[term] = Posting(ords, tfs)
            np.add.at(lengths, ords, tfs)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CorruptIndexError(f"bad postings record at byte {pos}: {exc}") from exc

    dim = int(manifest["dim"])
    raw = (d / "vectors.f32").read_bytes()
    if len(raw) != n_units * dim * 4:
        raise CorruptIndexError("vector file size does not match manifest")
    vectors = np.frombuffer(raw, dtype="<f4").reshape(n_units, dim).astype(np.float32)

    images: dict[str, ImageAsset] = {}
    buf = (d / "images.bin").read_bytes()
    pos = 0
    try:
        while pos < len(buf):
            (hlen,) = _U32.unpack_from(buf, pos)
            head = json.loads(buf[pos + 4 : pos + 4 + hlen])
            pos += 4 + hlen
            data = bytes(buf[pos : pos + head["n_bytes"]])
            pos += head["n_bytes"]
            anchor = CellAddress(*head["anchor"]) if head["anchor"] else None
            images[head["id"]] = ImageAsset(head["asset_id"], data, head["media_type"], anchor, head["caption"])
    except (struct.error, ValueError, KeyError, TypeError) as exc:
        raise CorruptIndexError(f"bad image record at byte {pos}: {exc}") from exc

    return HybridIndex(
        units=units,
        vectors=vectors,
        postings=postings,
        doc_lengths=lengths,
        dim=dim,
        images=images,
        embedder=manifest.get("embedder", {}),
        sources=manifest.get("sources", []),
        extra=manifest.get("extra", {}),
    )


def config_dict(cfg) -> dict:
    return asdict(cfg)
