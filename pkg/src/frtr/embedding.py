"""Text and image embedders sharing one unit-norm vector space.

``HashingEmbedder`` is the deterministic local reference: signed feature
hashing of lowercase alphanumeric tokens. It preserves token overlap, not
meaning. ``RemoteEmbedder`` talks to an HTTP multimodal embedding service.
Both return float32 unit vectors; downstream code treats dot products as
cosines.
"""

from __future__ import annotations

import base64
import hashlib
import logging
import re
import threading
import time
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Optional, Protocol, Sequence

import numpy as np

from .decompose import Unit
from .workbook import ALLOWED_MEDIA_TYPES, ImageAsset

log = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on anything that is not ``[a-z0-9]``; digit runs are kept."""
    return _TOKEN_RE.findall(text.lower())


class EmbeddingError(RuntimeError):
    retryable = False


class EmptyTextError(EmbeddingError, ValueError):
    pass


class UnsupportedMediaError(EmbeddingError, ValueError):
    pass


class RemoteEmbeddingError(EmbeddingError):
    def __init__(self, message: str, retryable: bool, attempts: int = 1) -> None:
        super().__init__(message)
        self.retryable = retryable
        self.attempts = attempts


class BatchEmbeddingError(EmbeddingError):
    def __init__(self, index: int, cause: Exception) -> None:
        super().__init__(f"item {index}: {cause}")
        self.index = index
        self.__cause__ = cause


@dataclass(frozen=True)
class EmbedderSpec:
    kind: str = "reference-hash"
    dim: int = 256
    endpoint: Optional[str] = None
    api_key: Optional[str] = None
    timeout_s: float = 30.0
    max_retries: int = 3
    concurrency: int = 4

    def __post_init__(self) -> None:
        if self.kind not in ("reference-hash", "remote"):
            raise ValueError(f"unknown embedder kind {self.kind!r}")
        if self.dim < 8:
            raise ValueError("dim must be >= 8")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError("remote embedder needs an endpoint")

    def public(self) -> dict:
        """Spec fields safe to persist (no credentials)."""
        return {"kind": self.kind, "dim": self.dim}


class Embedder(Protocol):
    dim: int

    def embed_text(self, text: str) -> np.ndarray: ...

    def embed_image(self, asset: ImageAsset, caption: Optional[str] = None) -> np.ndarray: ...

    def embed_batch(
        self, items: Sequence[Unit], images: Optional[Mapping[str, ImageAsset]] = None
    ) -> np.ndarray: ...


def normalize(vec: np.ndarray) -> np.ndarray:
    """L2-normalize in float64 and return float32; a zero vector maps to e_0."""
    v = np.asarray(vec, dtype=np.float64)
    norm = float(np.sqrt(np.dot(v, v)))
    if norm == 0.0 or not np.isfinite(norm):
        out = np.zeros(v.shape[0], dtype=np.float32)
        out[0] = 1.0
        return out
    return (v / norm).astype(np.float32)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(np.asarray(a, np.float64), np.asarray(b, np.float64)))


def _image_text(asset: ImageAsset, caption: Optional[str]) -> str:
    if asset.media_type not in ALLOWED_MEDIA_TYPES:
        raise UnsupportedMediaError(f"unsupported media type {asset.media_type!r}")
    digest = hashlib.sha256(asset.bytes).hexdigest()
    cap = caption if caption is not None else (asset.caption or "")
    return f"{cap} {asset.media_type} {digest}"


class _BatchMixin:
    def embed_batch(
        self, items: Sequence[Unit], images: Optional[Mapping[str, ImageAsset]] = None
    ) -> np.ndarray:
        """Embed units in order; image units look up their asset in ``images``."""
        if not items:
            raise ValueError("embed_batch needs a non-empty list")
        out = np.empty((len(items), self.dim), dtype=np.float32)
        for i, unit in enumerate(items):
            try:
                out[i] = self._embed_unit(unit, images)
            except Exception as exc:  # noqa: BLE001 - re-raised with the index
                raise BatchEmbeddingError(i, exc) from exc
        return out

    def _embed_unit(self, unit: Unit, images: Optional[Mapping[str, ImageAsset]]) -> np.ndarray:
        if unit.kind == "image":
            if images is None or unit.image_ref not in images:
                raise KeyError(f"no image asset for {unit.image_ref!r}")
            asset = images[unit.image_ref]
            return self.embed_image(asset, asset.caption)
        return self.embed_text(unit.text)


class HashingEmbedder(_BatchMixin):
    """Signed feature hashing into ``dim`` buckets, then L2 normalization."""

    kind = "reference-hash"

    def __init__(self, dim: int = 256) -> None:
        if dim < 8:
            raise ValueError("dim must be >= 8")
        self.dim = dim
        self._slot = lru_cache(maxsize=1 << 20)(self._slot_uncached)

    def _slot_uncached(self, token: str) -> tuple[int, float]:
        h = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")
        return (h >> 1) % self.dim, (1.0 if h & 1 else -1.0)

    def _raw(self, tokens: list[str]) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        slot = self._slot
        for tok in tokens:
            i, sign = slot(tok)
            vec[i] += sign
        return vec

    def embed_text(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EmptyTextError("cannot embed empty text")
        return normalize(self._raw(tokenize(text)))

    def embed_image(self, asset: ImageAsset, caption: Optional[str] = None) -> np.ndarray:
        return self.embed_text(_image_text(asset, caption))

    def embed_batch(
        self, items: Sequence[Unit], images: Optional[Mapping[str, ImageAsset]] = None
    ) -> np.ndarray:
        if not items:
            raise ValueError("embed_batch needs a non-empty list")
        # vectorized accumulate; sums of +/-1 are exact so rows equal single calls
        texts: list[str] = []
        for i, unit in enumerate(items):
            try:
                if unit.kind == "image":
                    if images is None or unit.image_ref not in images:
                        raise KeyError(f"no image asset for {unit.image_ref!r}")
                    asset = images[unit.image_ref]
                    texts.append(_image_text(asset, asset.caption))
                else:
                    if not unit.text.strip():
                        raise EmptyTextError("cannot embed empty text")
                    texts.append(unit.text)
            except Exception as exc:  # noqa: BLE001
                raise BatchEmbeddingError(i, exc) from exc
        n, dim = len(texts), self.dim
        flat_idx: list[int] = []
        weights: list[float] = []
        slot = self._slot
        for row, text in enumerate(texts):
            base = row * dim
            for tok in tokenize(text):
                i, sign = slot(tok)
                flat_idx.append(base + i)
                weights.append(sign)
        raw = np.bincount(
            np.asarray(flat_idx, dtype=np.int64), weights=np.asarray(weights, dtype=np.float64), minlength=n * dim
        ).reshape(n, dim)
        norms = np.sqrt(np.einsum("ij,ij->i", raw, raw))
        out = np.zeros((n, dim), dtype=np.float32)
        ok = norms > 0
        out[ok] = (raw[ok] / norms[ok, None]).astype(np.float32)
        out[~ok, 0] = 1.0
        return out


class RemoteEmbedder(_BatchMixin):
    """HTTP client for a multimodal embedding endpoint.

    Request bodies are ``{"text": ...}`` or ``{"image_bytes": <base64>,
    "media_type": ..., "caption": ...}``; the response is ``{"vector": [...]}``.
    Vectors are normalized here regardless of what the service returns.
    """

    kind = "remote"

    def __init__(self, spec: EmbedderSpec, client=None) -> None:
        import httpx

        self.spec = spec
        self.dim = spec.dim
        headers = {"Authorization": f"Bearer {spec.api_key}"} if spec.api_key else {}
        self._client = client or httpx.Client(timeout=spec.timeout_s, headers=headers)
        self._gate = threading.BoundedSemaphore(spec.concurrency)
        self._httpx = httpx

    def _post(self, payload: dict) -> np.ndarray:
        httpx = self._httpx
        attempts = 0
        delay = 0.5
        while True:
            attempts += 1
            try:
                with self._gate:
                    resp = self._client.post(self.spec.endpoint, json=payload)
            except (httpx.TimeoutException, httpx.TransportError) as exc:
                err = RemoteEmbeddingError(f"transport error: {exc}", retryable=True, attempts=attempts)
            else:
                if resp.status_code in (401, 403):
                    raise RemoteEmbeddingError(f"auth failed ({resp.status_code})", retryable=False, attempts=attempts)
                if resp.status_code == 429 or resp.status_code >= 500:
                    err = RemoteEmbeddingError(f"server error ({resp.status_code})", retryable=True, attempts=attempts)
                elif resp.status_code >= 400:
                    raise RemoteEmbeddingError(f"request rejected ({resp.status_code})", retryable=False, attempts=attempts)
                else:
                    try:
                        vec = np.asarray(resp.json()["vector"], dtype=np.float64)
                    except (ValueError, KeyError, TypeError) as exc:
                        raise RemoteEmbeddingError(f"bad response body: {exc}", retryable=False, attempts=attempts) from exc
                    if vec.shape != (self.dim,):
                        raise RemoteEmbeddingError(
                            f"expected {self.dim} dims, got {vec.shape}", retryable=False, attempts=attempts
                        )
                    return normalize(vec)
            if attempts > self.spec.max_retries:
                raise err
            log.info("embedding request failed (%s); retrying in %.1fs", err, delay)
            time.sleep(delay)
            delay *= 2

    def embed_text(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EmptyTextError("cannot embed empty text")
        return self._post({"text": text})

    def embed_image(self, asset: ImageAsset, caption: Optional[str] = None) -> np.ndarray:
        if asset.media_type not in ALLOWED_MEDIA_TYPES:
            raise UnsupportedMediaError(f"unsupported media type {asset.media_type!r}")
        return self._post(
            {
                "image_bytes": base64.b64encode(asset.bytes).decode("ascii"),
                "media_type": asset.media_type,
                "caption": caption if caption is not None else (asset.caption or ""),
            }
        )


def make_embedder(spec: EmbedderSpec) -> HashingEmbedder | RemoteEmbedder:
    if spec.kind == "reference-hash":
        return HashingEmbedder(spec.dim)
    return RemoteEmbedder(spec)
