"""Build an index on disk and query it over HTTP.

Uses the in-process test client so no port is opened; ``frtr serve``
runs the same app under uvicorn.
"""

import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from frtr.bench import GenSpec, generate_bench, load_bench
from frtr.config import load_config
from frtr.decompose import DecomposeConfig
from frtr.embedding import HashingEmbedder
from frtr.index import save_index
from frtr.pipeline import index_workbooks
from frtr.service import create_app

tmp = Path(tempfile.mkdtemp())
path = generate_bench(GenSpec(tier="easy", seed=5, n_questions=3), tmp / "bench.xlsx")
wb, cases = load_bench(path)
build = index_workbooks([wb], HashingEmbedder(), DecomposeConfig(exclude_sheets=("Questions",)),
                        {"kind": "reference-hash", "dim": 256})
save_index(build.index, tmp / "ix")

cfg = load_config(env={"FRTR_INDEX_DIR": str(tmp / "ix")})
client = TestClient(create_app(cfg, background=False))
print("GET /health ->", client.get("/health").json())

q = cases[0].question
r = client.post("/retrieve", json={"question": q, "k": 3}).json()
print("\nPOST /retrieve")
for c in r["chunks"]:
    print(f"  {c['unit_id']:28s} {c['score']:.4f} {c['source']}")

r = client.post("/query", json={"question": q}).json()
print("\nPOST /query ->", {k: r[k] for k in ("answer", "tokens")})
print("POST /query with empty question ->", client.post("/query", json={"question": ""}).status_code)
