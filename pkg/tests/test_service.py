import json
import os
import threading

import pytest
from fastapi.testclient import TestClient

from frtr.cli import main
from frtr.config import load_config
from frtr.reasoner import GenerationError
from frtr.service import create_app


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for k in list(os.environ):
        if k.startswith("FRTR_"):
            monkeypatch.delenv(k)


@pytest.fixture
def client(easy_index):
    idx, _ = easy_index
    return TestClient(create_app(load_config(env={}), loader=lambda: idx, background=False))


def test_health(client, easy_index):
    r = client.get("/health")
    assert r.status_code == 200
    body = r.json()
    assert body["status"] == "ok" and body["index_version"] == "frtr-index/1"
    assert body["n_units"] == len(easy_index[0])
    assert set(body["units_by_kind"]) == {"row", "column", "window", "image"}


def test_health_503_while_loading():
    gate = threading.Event()

    def slow():
        gate.wait(5)
        raise RuntimeError("never")

    c = TestClient(create_app(load_config(env={}), loader=slow, background=True))
    r = c.get("/health")
    assert r.status_code == 503 and r.json()["status"] == "loading"
    assert c.post("/query", json={"question": "x"}).status_code == 503
    gate.set()


def test_health_503_after_failed_load():
    def broken():
        raise RuntimeError("checksum mismatch")

    c = TestClient(create_app(load_config(env={}), loader=broken, background=False))
    r = c.get("/health")
    assert r.status_code == 503 and "checksum" in r.json()["error"]
    assert c.post("/reload").status_code == 500


@pytest.mark.parametrize(
    "payload, status",
    [
        ("not json", 400),
        ([1, 2], 400),
        ({"q": "x"}, 400),
        ({"question": 5}, 400),
        ({"question": "  "}, 422),
        ({"question": "x", "k_final": 0}, 400),
        ({"question": "x", "k_final": True}, 400),
        ({"question": "x", "dry_run": "yes"}, 400),
    ],
)
def test_bad_requests(client, payload, status):
    if isinstance(payload, str):
        r = client.post("/query", content=payload, headers={"content-type": "application/json"})
    else:
        r = client.post("/query", json=payload)
    assert r.status_code == status and "error" in r.json()


def test_retrieve_matches_cli_dry_run(client, easy_bench, tmp_path, capsys):
    path, _, cases, plants = easy_bench
    q = cases[1].question
    r = client.post("/retrieve", json={"question": q})
    assert r.status_code == 200
    chunks = r.json()["chunks"]
    assert plants[1].gold_unit_ids[0] in [c["unit_id"] for c in chunks]

    ix = tmp_path / "ix"
    main(["index", str(path), "--index-dir", str(ix)])
    capsys.readouterr()
    main(["query", q, "--index-dir", str(ix), "--dry-run", "--json"])
    cli_chunks = json.loads(capsys.readouterr().out)["chunks"]
    assert [c["unit_id"] for c in cli_chunks] == [c["unit_id"] for c in chunks]
    assert [c["score"] for c in cli_chunks] == [c["score"] for c in chunks]


def test_retrieve_k(client):
    r = client.post("/retrieve", json={"question": "audit flag", "k": 3})
    assert len(r.json()["chunks"]) == 3


def test_query_answer_and_dry_run(client, easy_bench):
    q = easy_bench[2][0].question
    r = client.post("/query", json={"question": q})
    body = r.json()
    assert r.status_code == 200 and body["answer"] and "prompt" not in body
    r = client.post("/query", json={"question": q, "dry_run": True, "k_final": 4})
    body = r.json()
    assert body["answer"] is None and q in body["prompt"] and len(body["chunks"]) == 4
    assert "attachments" in body


def test_generator_failure_502(client):
    class Down:
        is_mock = False

        def complete(self, bundle):
            raise GenerationError("upstream timeout", retryable=True, attempts=3)

    client.app.state.frtr.runtime.client = Down()
    r = client.post("/query", json={"question": "audit flag"})
    assert r.status_code == 502
    assert r.json()["retryable"] is True and r.json()["attempts"] == 3


def test_unparseable_reply_502(client):
    class Chatty:
        is_mock = False

        def complete(self, bundle):
            return "I think it is B5"

    client.app.state.frtr.runtime.client = Chatty()
    r = client.post("/query", json={"question": "audit flag"})
    assert r.status_code == 502 and r.json()["raw"] == "I think it is B5"


def test_reload_swaps_runtime(client):
    before = client.app.state.frtr.runtime
    assert client.post("/reload").json() == {"status": "ok"}
    assert client.app.state.frtr.runtime is not before
    assert client.get("/health").status_code == 200
