"""Prompt composition, answer generation and reply parsing."""

from __future__ import annotations

import base64
import json
import logging
import math
import re
import time
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Callable, Mapping, Optional, Protocol, Sequence, Union

from .decompose import Unit
from .index import FusedHit
from .workbook import ImageAsset, render_a1

log = logging.getLogger(__name__)

UnitResolver = Union[Mapping[str, Unit], Callable[[str], Unit]]


class UnresolvedUnitError(KeyError):
    pass


class AnswerParseError(ValueError):
    """Reply could not be turned into ``(reasoning, answer)``; ``raw`` is kept."""

    def __init__(self, message: str, raw: str, latency_s: Optional[float] = None) -> None:
        super().__init__(message)
        self.raw = raw
        self.latency_s = latency_s


class GenerationError(RuntimeError):
    def __init__(self, message: str, retryable: bool = False, attempts: int = 1) -> None:
        super().__init__(message)
        self.retryable = retryable
        self.attempts = attempts


class ContentRefusalError(GenerationError):
    pass


@dataclass(frozen=True)
class ChunkInfo:
    unit_id: str
    rrf_score: float
    source: str
    kind: str
    sheet: str
    span: str

    def to_dict(self) -> dict:
        return {
            "unit_id": self.unit_id,
            "score": self.rrf_score,
            "source": self.source,
            "kind": self.kind,
            "sheet": self.sheet,
            "span": self.span,
        }


@dataclass(frozen=True)
class Attachment:
    data: bytes
    media_type: str
    unit_id: str


@dataclass(frozen=True)
class PromptBundle:
    text: str
    attachments: tuple[Attachment, ...]
    token_estimate: int
    chunk_manifest: tuple[ChunkInfo, ...]


@dataclass(frozen=True)
class ModelAnswer:
    reasoning: str
    answer: str
    raw: str
    latency_s: float


@lru_cache(maxsize=1)
def prompt_template() -> str:
    """The instruction template with the few-shot block filled in."""
    pkg = resources.files("frtr")
    template = (pkg / "prompt_template.txt").read_text(encoding="utf-8")
    shots = (pkg / "few_shot_examples.txt").read_text(encoding="utf-8").rstrip("\n")
    return template.replace("{few_shot_examples}", shots).rstrip("\n")


def estimate_tokens(text: str) -> int:
    """Token count estimate: ``ceil(len(text) / 4)``. A heuristic, not a tokenizer."""
    return math.ceil(len(text) / 4)


def format_chunk(hit: FusedHit, unit: Unit, ordinal: int) -> str:
    if ordinal < 1:
        raise ValueError("ordinal must be >= 1")
    body = unit.text
    if unit.kind == "image":
        body = f"{unit.text}\n[image attached: {unit.image_ref}]"
    return (
        f"Chunk {ordinal} (Score: {hit.rrf_score:.4f}, Source: {hit.source})\n"
        f"Type: {unit.kind} | Sheet: {unit.sheet}\n"
        f"{body}"
    )


def _resolve(units: UnitResolver, unit_id: str) -> Unit:
    try:
        if isinstance(units, Mapping):
            return units[unit_id]
        return units(unit_id)
    except KeyError:
        raise UnresolvedUnitError(unit_id) from None


_PLACEHOLDER_RE = re.compile(r"\{(relevant_chunks|task)\}")


def compose_prompt(
    query: str,
    hits: Sequence[FusedHit],
    units: UnitResolver,
    images: Optional[Mapping[str, ImageAsset]] = None,
) -> PromptBundle:
    """Fill the template with ``hits`` (in fused order) and ``query``."""
    chunks, manifest, attachments = [], [], []
    for ordinal, hit in enumerate(hits, start=1):
        unit = _resolve(units, hit.unit_id)
        chunks.append(format_chunk(hit, unit, ordinal))
        manifest.append(ChunkInfo(hit.unit_id, hit.rrf_score, hit.source, unit.kind, unit.sheet, unit.span))
        if unit.kind == "image":
            asset = (images or {}).get(unit.image_ref)
            if asset is None:
                raise UnresolvedUnitError(f"image asset {unit.image_ref!r} for {unit.unit_id!r}")
            attachments.append(Attachment(asset.bytes, asset.media_type, unit.unit_id))
    fill = {"relevant_chunks": "\n\n".join(chunks), "task": query}
    text = _PLACEHOLDER_RE.sub(lambda m: fill[m.group(1)], prompt_template())
    return PromptBundle(text, tuple(attachments), max(1, estimate_tokens(text)), tuple(manifest))


# -- reply parsing -------------------------------------------------------------

_FENCE_RE = re.compile(r"^\s*```[A-Za-z0-9_+-]*[ \t]*\n?(.*?)\n?[ \t]*```\s*$", re.DOTALL)


def _first_object(text: str) -> Optional[str]:
    start = text.find("{")
    while start != -1:
        depth, in_str, esc = 0, False, False
        for i in range(start, len(text)):
            ch = text[i]
            if in_str:
                if esc:
                    esc = False
                elif ch == "\\":
                    esc = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return text[start : i + 1]
        start = text.find("{", start + 1)
    return None


def _as_pair(obj: object, raw: str) -> tuple[str, str]:
    if not isinstance(obj, dict):
        raise AnswerParseError("reply is not a JSON object", raw)
    for key in ("reasoning", "answer"):
        if key not in obj:
            raise AnswerParseError(f'reply is missing "{key}"', raw)
        if not isinstance(obj[key], str):
            raise AnswerParseError(f'"{key}" is not a string', raw)
    return obj["reasoning"], obj["answer"]


def parse_answer(raw: str) -> tuple[str, str]:
    """Strict JSON first, then one stripped code fence, then the first balanced object."""
    candidates = [raw]
    m = _FENCE_RE.match(raw)
    if m:
        candidates.append(m.group(1))
    obj_text = _first_object(raw)
    if obj_text is not None:
        candidates.append(obj_text)
    last_error: Optional[AnswerParseError] = None
    for cand in candidates:
        try:
            obj = json.loads(cand)
        except json.JSONDecodeError:
            continue
        try:
            return _as_pair(obj, raw)
        except AnswerParseError as exc:
            last_error = exc
    if last_error is not None:
        raise last_error
    raise AnswerParseError("reply is not parseable JSON", raw)


# -- answer generators -----------------------------------------------------------


class AnswerClient(Protocol):
    def complete(self, bundle: PromptBundle) -> str: ...


class MockAnswerClient:
    """Deterministic stand-in for a chat model.

    Looks only at the top-ranked chunk: for an image it answers the first
    word of the image unit's text (the caption keyword); otherwise the
    sheet-qualified A1 reference of the chunk's top-left cell.
    """

    is_mock = True

    def __init__(self, units: UnitResolver) -> None:
        self.units = units

    def answer_for(self, bundle: PromptBundle) -> tuple[str, str]:
        if not bundle.chunk_manifest:
            return "No chunks were retrieved.", "N/A"
        top = bundle.chunk_manifest[0]
        unit = _resolve(self.units, top.unit_id)
        if unit.kind == "image":
            words = unit.text.split()
            keyword = words[0].strip(".,:;!?()[]") if words else unit.image_ref
            return f"Top chunk is image {unit.image_ref}; using its caption keyword.", keyword
        cell = unit.first_cell()
        return f"Top chunk is {unit.kind} {unit.span} on {unit.sheet}.", render_a1(cell, with_sheet=True)

    def complete(self, bundle: PromptBundle) -> str:
        reasoning, answer = self.answer_for(bundle)
        return json.dumps({"reasoning": reasoning, "answer": answer})


@dataclass(frozen=True)
class ChatClientSpec:
    endpoint: str
    api_key: Optional[str] = None
    model: Optional[str] = None
    timeout_s: float = 120.0
    max_retries: int = 2
    concurrency: int = 4
    extra: dict = field(default_factory=dict)


class RemoteChatClient:
    """HTTP chat-completion client.

    Request: ``{"prompt": str, "attachments": [{"data": base64,
    "media_type": str, "unit_id": str}], "model": str?}``.
    Response: ``{"text": str}``; ``{"refusal": str}`` or HTTP 451 means the
    model declined on content policy.
    """

    is_mock = False

    def __init__(self, spec: ChatClientSpec, client=None) -> None:
        import threading

        import httpx

        self.spec = spec
        self._httpx = httpx
        headers = {"Authorization": f"Bearer {spec.api_key}"} if spec.api_key else {}
        self._client = client or httpx.Client(timeout=spec.timeout_s, headers=headers)
        self._gate = threading.BoundedSemaphore(spec.concurrency)

    def complete(self, bundle: PromptBundle) -> str:
        httpx = self._httpx
        payload = {
            "prompt": bundle.text,
            "attachments": [
                {"data": base64.b64encode(a.data).decode("ascii"), "media_type": a.media_type, "unit_id": a.unit_id}
                for a in bundle.attachments
            ],
            **({"model": self.spec.model} if self.spec.model else {}),
            **self.spec.extra,
        }
        attempts, delay = 0, 1.0
        while True:
            attempts += 1
            try:
                with self._gate:
                    resp = self._client.post(self.spec.endpoint, json=payload)
            except httpx.TimeoutException as exc:
                err = GenerationError(f"timeout after {attempts} attempt(s): {exc}", retryable=True, attempts=attempts)
            except httpx.TransportError as exc:
                err = GenerationError(f"transport error after {attempts} attempt(s): {exc}", retryable=True, attempts=attempts)
            else:
                if resp.status_code == 451:
                    raise ContentRefusalError("model refused on content policy", attempts=attempts)
                if resp.status_code in (401, 403):
                    raise GenerationError(f"auth failed ({resp.status_code})", attempts=attempts)
                if resp.status_code == 429 or resp.status_code >= 500:
                    err = GenerationError(f"server error ({resp.status_code})", retryable=True, attempts=attempts)
                elif resp.status_code >= 400:
                    raise GenerationError(f"request rejected ({resp.status_code}): {resp.text[:200]}", attempts=attempts)
                else:
                    try:
                        body = resp.json()
                    except ValueError as exc:
                        raise GenerationError(f"response is not JSON: {exc}", attempts=attempts) from exc
                    if body.get("refusal"):
                        raise ContentRefusalError(str(body["refusal"]), attempts=attempts)
                    if not isinstance(body.get("text"), str):
                        raise GenerationError('response has no "text" field', attempts=attempts)
                    return body["text"]
            if attempts > self.spec.max_retries:
                raise err
            log.info("generation attempt %d failed (%s); retrying in %.1fs", attempts, err, delay)
            time.sleep(delay)
            delay *= 2


def generate(bundle: PromptBundle, client: AnswerClient) -> ModelAnswer:
    """Call ``client`` and parse its reply. ``latency_s`` covers only the model call."""
    t0 = time.perf_counter()
    raw = client.complete(bundle)
    latency = time.perf_counter() - t0
    try:
        reasoning, answer = parse_answer(raw)
    except AnswerParseError as exc:
        exc.latency_s = latency
        raise
    if not reasoning.strip() or not answer.strip():
        raise AnswerParseError("reasoning and answer must be non-empty", raw, latency)
    return ModelAnswer(reasoning, answer, raw, latency)
