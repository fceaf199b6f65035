import hashlib
import json
import os

import pytest

from frtr.cli import EXIT_EMPTY, EXIT_ERROR, EXIT_GENERATION, EXIT_PARSE, main
from frtr.xlsx_writer import SheetData, write_xlsx


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for k in list(os.environ):
        if k.startswith("FRTR_"):
            monkeypatch.delenv(k)


@pytest.fixture
def indexed(tmp_path, easy_bench, capsys):
    path = easy_bench[0]
    ix = tmp_path / "ix"
    assert main(["index", str(path), "--index-dir", str(ix)]) == 0
    capsys.readouterr()
    return ix


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_index_reports_kinds(tmp_path, easy_bench, capsys):
    code, out, _ = run(capsys, "index", str(easy_bench[0]), "--index-dir", str(tmp_path / "a"), "--json")
    assert code == 0
    rec = json.loads(out)
    assert set(rec["units_by_kind"]) == {"row", "column", "window", "image"}
    assert all(v > 0 for v in rec["units_by_kind"].values())
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["units_by_kind"] == rec["units_by_kind"]
    assert manifest["embedder"] == {"kind": "reference-hash", "dim": 256}

    run(capsys, "index", str(easy_bench[0]), "--index-dir", str(tmp_path / "b"))
    digest = [hashlib.sha256((tmp_path / d / "vectors.f32").read_bytes()).hexdigest() for d in ("a", "b")]
    assert digest[0] == digest[1]


def test_index_text_output(tmp_path, easy_bench, capsys):
    code, out, _ = run(capsys, "index", str(easy_bench[0]), "--index-dir", str(tmp_path / "t"))
    assert code == 0 and "units:" in out and "build time:" in out


def test_query_dry_run_shows_gold(indexed, easy_bench, capsys):
    _, _, cases, plants = easy_bench
    code, out, _ = run(capsys, "query", cases[0].question, "--index-dir", str(indexed), "--dry-run", "--json")
    assert code == 0
    rec = json.loads(out)
    assert plants[0].gold_unit_ids[0] in [c["unit_id"] for c in rec["chunks"]]
    assert rec["answer"] is None and cases[0].question in rec["prompt"]
    code, out, _ = run(capsys, "query", cases[0].question, "--index-dir", str(indexed), "--dry-run")
    assert "Chunk 1 (Score:" in out


def test_query_json_and_show_chunks(indexed, easy_bench, capsys):
    q = easy_bench[2][0].question
    code, out, _ = run(capsys, "query", q, "--index-dir", str(indexed), "--json")
    rec = json.loads(out)
    assert code == 0 and rec["answer"] and rec["reasoning"]
    assert {"unit_id", "score", "source", "sheet", "kind"} <= set(rec["chunks"][0])
    code, out, _ = run(capsys, "query", q, "--index-dir", str(indexed), "--show-chunks", "--k-final", "3")
    assert code == 0 and out.startswith("answer: ") and " 3. " in out and " 4. " not in out


def test_unknown_index_dir(tmp_path, capsys):
    code, _, err = run(capsys, "query", "q", "--index-dir", str(tmp_path / "nope"))
    assert code == EXIT_ERROR and "no index" in err


def test_embedder_mismatch(indexed, capsys, monkeypatch):
    monkeypatch.setenv("FRTR_EMBEDDER", "remote")
    monkeypatch.setenv("FRTR_EMBED_ENDPOINT", "http://127.0.0.1:9")
    code, _, err = run(capsys, "query", "q", "--index-dir", str(indexed))
    assert code == EXIT_ERROR and "reference-hash" in err


def test_empty_retrieval_exit_code(tmp_path, capsys):
    p = write_xlsx(tmp_path / "e.xlsx", [SheetData("Questions", [["Question"]])])
    run(capsys, "index", str(p), "--index-dir", str(tmp_path / "ix"))
    code, _, err = run(capsys, "query", "anything", "--index-dir", str(tmp_path / "ix"))
    assert code == EXIT_EMPTY


def test_generation_and_parse_exit_codes(indexed, capsys, monkeypatch):
    import frtr.cli as cli
    from frtr.reasoner import GenerationError

    class Bad:
        is_mock = False

        def __init__(self, mode):
            self.mode = mode

        def complete(self, bundle):
            if self.mode == "gen":
                raise GenerationError("down", retryable=True, attempts=3)
            return "not json at all"

    for mode, code in (("gen", EXIT_GENERATION), ("parse", EXIT_PARSE)):
        monkeypatch.setattr(cli.Runtime, "from_config", classmethod(
            lambda cls, index, cfg, m=mode: cls(index, cli.make_embedder(cfg.embedder), Bad(m), cfg.retrieval)))
        got, _, err = run(capsys, "query", "audit flag", "--index-dir", str(indexed))
        assert got == code
        if mode == "parse":
            assert "not json at all" in err


def test_eval_generate_twice_identical(tmp_path, capsys):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    code, text, _ = run(capsys, "eval", "--generate", "easy", "--out", str(out_a))
    assert code == 0 and "1.000" in text
    assert text.splitlines()[0].split("|")[1].strip() == "Accuracy"
    run(capsys, "eval", "--generate", "easy", "--out", str(out_b))
    assert (out_a / "easy-seed0.json").read_bytes() == (out_b / "easy-seed0.json").read_bytes()
    assert (out_a / "summary.txt").read_text() == (out_b / "summary.txt").read_text()


def test_eval_against_saved_index(indexed, tmp_path, capsys):
    code, out, _ = run(capsys, "eval", "--index-dir", str(indexed), "--out", str(tmp_path / "r"), "--json")
    assert code == 0 and json.loads(out)[0]["answer_accuracy"] == 1.0


def test_eval_missing_questions_sheet(tmp_path, capsys):
    p = write_xlsx(tmp_path / "plain.xlsx", [SheetData("Data", [["a"], [1]])])
    code, _, err = run(capsys, "eval", str(p), "--out", str(tmp_path / "r"))
    assert code == EXIT_ERROR and "plain.xlsx" in err and "Questions" in err


def test_eval_nothing_to_do(capsys):
    code, _, _ = run(capsys, "eval")
    assert code == 2


def test_generate_and_sheets(tmp_path, capsys):
    out = tmp_path / "g.xlsx"
    code, text, _ = run(capsys, "generate", "--tier", "easy", "--rows", "500", "--sheets", "3", "--out", str(out), "--json")
    assert code == 0 and json.loads(text)["rows"] == 500
    code, text, _ = run(capsys, "sheets", str(out), "--json")
    rows = {r["sheet"]: r["rows"] for r in json.loads(text)}
    assert list(rows)[:4] == ["Metadata", "Sales", "Costs", "Inventory"]
    assert rows["Sales"] + rows["Costs"] + rows["Inventory"] == 500


def test_bad_config_file(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"generator": {"api_key": "x"}}))
    code, _, err = run(capsys, "sheets", "x.xlsx", "--config", str(p))
    assert code == EXIT_ERROR and "config" in err


def test_ingest_error_is_clean(tmp_path, capsys):
    p = tmp_path / "junk.xlsx"
    p.write_text("junk")
    code, _, err = run(capsys, "index", str(p), "--index-dir", str(tmp_path / "ix"))
    assert code == EXIT_ERROR and "NotAZipError" in err and "Traceback" not in err


def test_usage_error():
    with pytest.raises(SystemExit) as ei:
        main(["frobnicate"])
    assert ei.value.code == 2
