import json

import pytest

from frtr.config import AppConfig, ConfigError, load_config


def test_defaults():
    cfg = load_config(env={})
    assert cfg == AppConfig()
    assert cfg.retrieval.k_rrf == 60 and cfg.retrieval.k_final == 10
    assert cfg.embedder.kind == "reference-hash" and cfg.embedder.dim == 256
    assert cfg.generator.kind == "mock"
    assert cfg.decompose.exclude_sheets == ("Questions",)


def test_file_then_env(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({
        "index_dir": "ix",
        "retrieval": {"k_final": 5},
        "decompose": {"k_target": 50, "exclude_sheets": ["Questions", "Metadata"]},
        "embedder": {"dim": 128},
    }))
    cfg = load_config(p, env={"FRTR_EMBED_DIM": "64", "FRTR_INDEX_DIR": "other"})
    assert cfg.retrieval.k_final == 5
    assert cfg.decompose.k_target == 50 and cfg.decompose.exclude_sheets == ("Questions", "Metadata")
    assert cfg.embedder.dim == 64
    assert cfg.index_dir == "other"
    assert load_config(env={"FRTR_CONFIG": str(p)}).index_dir == "ix"


def test_credentials_only_from_env(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"generator": {"kind": "remote", "endpoint": "http://x", "api_key": "oops"}}))
    with pytest.raises(ConfigError, match="environment"):
        load_config(p, env={})
    env = {"FRTR_GENERATOR": "remote", "FRTR_CHAT_ENDPOINT": "http://chat", "FRTR_CHAT_API_KEY": "sk-1",
           "FRTR_EMBEDDER": "remote", "FRTR_EMBED_ENDPOINT": "http://emb", "FRTR_EMBED_API_KEY": "sk-2"}
    cfg = load_config(env=env)
    assert cfg.generator.api_key == "sk-1" and cfg.embedder.api_key == "sk-2"
    assert "sk-2" not in json.dumps(cfg.embedder.public())


@pytest.mark.parametrize(
    "body",
    [
        {"nope": 1},
        {"retrieval": {"k_final": 50}},
        {"retrieval": {"bogus": 1}},
        {"generator": {"kind": "remote"}},
        {"eval_concurrency": 0},
        [],
    ],
)
def test_invalid_files(tmp_path, body):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(body))
    with pytest.raises(ConfigError):
        load_config(p, env={})


def test_unreadable_and_bad_json(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json", env={})
    p = tmp_path / "bad.json"
    p.write_text("{")
    with pytest.raises(ConfigError):
        load_config(p, env={})
    with pytest.raises(ConfigError):
        load_config(env={"FRTR_EMBED_DIM": "big"})
