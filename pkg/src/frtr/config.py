"""Application configuration: a JSON file overlaid by environment variables.

File format (every key optional)::

    {
      "index_dir": "frtr-index",
      "log_level": "INFO",
      "eval_concurrency": 1,
      "embedder":  {"kind": "reference-hash", "dim": 256, "endpoint": null,
                    "timeout_s": 30, "max_retries": 3, "concurrency": 4},
      "generator": {"kind": "mock", "endpoint": null, "model": null,
                    "timeout_s": 120, "max_retries": 2, "concurrency": 4},
      "retrieval": {"k_rrf": 60, "k_vector": 20, "k_lexical": 20, "k_final": 10,
                    "bm25_k1": 1.2, "bm25_b": 0.75},
      "decompose": {"k_target": 100, "window_stride_factor": 1.0,
                    "max_unit_chars": 2000, "header_rows": 1,
                    "exclude_sheets": ["Questions"]}
    }

Environment overrides:

    FRTR_CONFIG          path of the JSON file
    FRTR_INDEX_DIR       index directory
    FRTR_LOG_LEVEL       logging level name
    FRTR_EMBEDDER        reference-hash | remote
    FRTR_EMBED_DIM       embedding dimension
    FRTR_EMBED_ENDPOINT  remote embedding URL
    FRTR_EMBED_API_KEY   remote embedding credential
    FRTR_GENERATOR       mock | remote
    FRTR_CHAT_ENDPOINT   remote chat URL
    FRTR_CHAT_MODEL      model name forwarded to the chat endpoint
    FRTR_CHAT_API_KEY    remote chat credential

Credentials are read from the environment only; a key in the file is rejected.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Optional

from .decompose import DecomposeConfig
from .embedding import EmbedderSpec
from .index import RetrievalConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str = "mock"
    endpoint: Optional[str] = None
    api_key: Optional[str] = None
    model: Optional[str] = None
    timeout_s: float = 120.0
    max_retries: int = 2
    concurrency: int = 4

    def __post_init__(self) -> None:
        if self.kind not in ("mock", "remote"):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError("remote generator needs an endpoint")


@dataclass(frozen=True)
class AppConfig:
    index_dir: str = "frtr-index"
    embedder: EmbedderSpec = field(default_factory=EmbedderSpec)
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    decompose: DecomposeConfig = field(default_factory=lambda: DecomposeConfig(exclude_sheets=("Questions",)))
    log_level: str = "INFO"
    eval_concurrency: int = 1


_SECRET_KEYS = {"api_key", "apikey", "token", "password", "secret"}


def _section(cls, data: Mapping, name: str, base=None):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{name} must be an object")
    known = {f.name for f in fields(cls)}
    for key in data:
        if key.lower() in _SECRET_KEYS:
            raise ConfigError(f"{name}.{key}: credentials must come from environment variables")
        if key not in known:
            raise ConfigError(f"{name}: unknown key {key!r}")
    values = dict(data)
    if "exclude_sheets" in values:
        values["exclude_sheets"] = tuple(values["exclude_sheets"])
    try:
        return replace(base, **values) if base is not None else cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def load_config(path: Optional[str | Path] = None, env: Optional[Mapping[str, str]] = None) -> AppConfig:
    """Defaults, then the JSON file (``path`` or ``$FRTR_CONFIG``), then env overrides."""
    env = os.environ if env is None else env
    path = path or env.get("FRTR_CONFIG")
    raw: dict = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    top = {"index_dir", "log_level", "eval_concurrency", "embedder", "generator", "retrieval", "decompose"}
    unknown = set(raw) - top
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")

    cfg = AppConfig()
    emb = dict(raw.get("embedder", {}))
    gen = dict(raw.get("generator", {}))
    if "FRTR_EMBEDDER" in env:
        emb["kind"] = env["FRTR_EMBEDDER"]
    if "FRTR_EMBED_DIM" in env:
        try:
            emb["dim"] = int(env["FRTR_EMBED_DIM"])
        except ValueError as exc:
            raise ConfigError(f"FRTR_EMBED_DIM: {exc}") from exc
    if "FRTR_EMBED_ENDPOINT" in env:
        emb["endpoint"] = env["FRTR_EMBED_ENDPOINT"]
    if "FRTR_GENERATOR" in env:
        gen["kind"] = env["FRTR_GENERATOR"]
    if "FRTR_CHAT_ENDPOINT" in env:
        gen["endpoint"] = env["FRTR_CHAT_ENDPOINT"]
    if "FRTR_CHAT_MODEL" in env:
        gen["model"] = env["FRTR_CHAT_MODEL"]

    embedder = _section(EmbedderSpec, emb, "embedder")
    generator = _section(GeneratorSpec, gen, "generator")
    if env.get("FRTR_EMBED_API_KEY"):
        embedder = replace(embedder, api_key=env["FRTR_EMBED_API_KEY"])
    if env.get("FRTR_CHAT_API_KEY"):
        generator = replace(generator, api_key=env["FRTR_CHAT_API_KEY"])

    retrieval = _section(RetrievalConfig, raw.get("retrieval", {}), "retrieval")
    decompose = _section(DecomposeConfig, raw.get("decompose", {}), "decompose", cfg.decompose)

    index_dir = env.get("FRTR_INDEX_DIR") or raw.get("index_dir") or cfg.index_dir
    log_level = (env.get("FRTR_LOG_LEVEL") or raw.get("log_level") or cfg.log_level).upper()
    try:
        eval_concurrency = int(raw.get("eval_concurrency", cfg.eval_concurrency))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"eval_concurrency: {exc}") from exc
    if eval_concurrency < 1:
        raise ConfigError("eval_concurrency must be >= 1")
    return AppConfig(
        index_dir=str(index_dir),
        embedder=embedder,
        generator=generator,
        retrieval=retrieval,
        decompose=decompose,
        log_level=log_level,
        eval_concurrency=eval_concurrency,
    )
