import base64
import json

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from frtr.decompose import Unit
from frtr.index import FusedHit
from frtr.reasoner import (
    AnswerParseError,
    ChatClientSpec,
    ContentRefusalError,
    GenerationError,
    MockAnswerClient,
    RemoteChatClient,
    UnresolvedUnitError,
    compose_prompt,
    estimate_tokens,
    format_chunk,
    generate,
    parse_answer,
    prompt_template,
)
from frtr.workbook import CellAddress, ImageAsset

ROW = Unit("Sales_Q4!row:42", "row", "Sales_Q4", "A42:C42", "ROW_42 [Sales_Q4]: Product=Widget | Units=4 | Revenue=100")
IMG = Unit("Sales_Q4!img:Chart_001", "image", "Sales_Q4", "Chart_001", "Increasing trend chart", "Chart_001")
ASSET = ImageAsset("Chart_001", b"\x89PNGbytes", "image/png", CellAddress("Sales_Q4", 3, 3), "Increasing trend chart")
UNITS = {u.unit_id: u for u in (ROW, IMG)}


def test_format_chunk_header():
    text = format_chunk(FusedHit(ROW.unit_id, 1 / 61, 1, None), ROW, 1)
    lines = text.split("\n")
    assert lines[0] == "Chunk 1 (Score: 0.0164, Source: Vector)"
    assert lines[1] == "Type: row | Sheet: Sales_Q4"
    assert lines[2] == ROW.text


def test_format_chunk_rounding_and_image():
    assert "Score: 0.0328, Source: Both" in format_chunk(FusedHit(ROW.unit_id, 2 / 61, 1, 1), ROW, 3)
    text = format_chunk(FusedHit(IMG.unit_id, 1 / 63, None, 3), IMG, 2)
    assert text.endswith("[image attached: Chart_001]")
    assert "Source: Lexical" in text and "Type: image" in text
    with pytest.raises(ValueError):
        format_chunk(FusedHit(ROW.unit_id, 0.1, 1), ROW, 0)


def test_estimate_tokens():
    assert estimate_tokens("") == 0
    assert estimate_tokens("x" * 400) == 100
    assert estimate_tokens("x" * 401) == 101


def test_template_contains_required_blocks():
    t = prompt_template()
    assert "{relevant_chunks}" in t and "{task}" in t
    assert "CRITICAL RULES FOR IMAGES/CHARTS" in t
    assert "{few_shot_examples}" not in t


def test_compose_empty_hits():
    b = compose_prompt("What is X?", [], UNITS)
    assert b.attachments == () and b.chunk_manifest == ()
    assert "What is X?" in b.text
    assert b.token_estimate >= 1


def test_compose_orders_and_attaches():
    hits = [FusedHit(ROW.unit_id, 2 / 61, 1, 1), FusedHit(IMG.unit_id, 1 / 62, 2, None)]
    b = compose_prompt("Which trend?", hits, UNITS, {"Chart_001": ASSET})
    assert b.text.index("Chunk 1 (") < b.text.index("Chunk 2 (")
    assert "Chunk 3 (" not in b.text
    assert [a.unit_id for a in b.attachments] == [IMG.unit_id]
    assert b.attachments[0].data == ASSET.bytes
    assert [c.unit_id for c in b.chunk_manifest] == [ROW.unit_id, IMG.unit_id]
    assert b.token_estimate == estimate_tokens(b.text)
    again = compose_prompt("Which trend?", hits, lambda uid: UNITS[uid], {"Chart_001": ASSET})
    assert again.text == b.text


def test_compose_text_only_has_no_attachments():
    hits = [FusedHit(ROW.unit_id, 1 / 61, 1)] * 10
    assert compose_prompt("q", hits, UNITS).attachments == ()


def test_compose_does_not_expand_braces_in_content():
    u = Unit("S!row:1", "row", "S", "A1:A1", "ROW_1 [S]: note={task}")
    b = compose_prompt("real question", [FusedHit(u.unit_id, 0.1, 1)], {u.unit_id: u})
    assert "note={task}" in b.text


def test_compose_unresolved():
    with pytest.raises(UnresolvedUnitError):
        compose_prompt("q", [FusedHit("nope", 0.1, 1)], UNITS)
    with pytest.raises(UnresolvedUnitError):
        compose_prompt("q", [FusedHit(IMG.unit_id, 0.1, 1)], UNITS, {})


# -- parsing ---------------------------------------------------------------------


def test_parse_strict():
    assert parse_answer('{"reasoning":"r","answer":"A1"}') == ("r", "A1")


def test_parse_fenced():
    raw = '```json\n{"reasoning": "r", "answer": "A1"}\n```'
    assert parse_answer(raw) == ("r", "A1")


def test_parse_embedded_object():
    raw = 'Sure! Here it is: {"reasoning": "uses {braces}", "answer": "42"} hope that helps'
    assert parse_answer(raw) == ("uses {braces}", "42")


@pytest.mark.parametrize(
    "raw, msg",
    [('{"answer":"A1"}', "reasoning"), ('{"reasoning":"r","answer":5}', "answer"), ("no json", "parseable"), ("[1]", "object")],
)
def test_parse_errors(raw, msg):
    with pytest.raises(AnswerParseError, match=msg) as ei:
        parse_answer(raw)
    assert ei.value.raw == raw


@given(st.text(), st.text())
def test_parse_round_trip(reasoning, answer):
    assert parse_answer(json.dumps({"reasoning": reasoning, "answer": answer})) == (reasoning, answer)


# -- generation ------------------------------------------------------------------


def test_mock_answers_top_cell_reference():
    b = compose_prompt("q", [FusedHit(ROW.unit_id, 1 / 61, 1)], UNITS)
    ans = generate(b, MockAnswerClient(UNITS))
    assert ans.answer == "Sales_Q4!A42"
    assert ans.reasoning and ans.latency_s >= 0
    assert generate(b, MockAnswerClient(UNITS)).raw == ans.raw


def test_mock_answers_caption_keyword():
    b = compose_prompt("q", [FusedHit(IMG.unit_id, 1 / 61, 1)], UNITS, {"Chart_001": ASSET})
    assert generate(b, MockAnswerClient(UNITS)).answer == "Increasing"


def test_mock_without_chunks():
    assert generate(compose_prompt("q", [], UNITS), MockAnswerClient(UNITS)).answer == "N/A"


class _Raw:
    def __init__(self, text):
        self.text = text

    def complete(self, bundle):
        return self.text


def test_generate_requires_nonempty_fields():
    b = compose_prompt("q", [], UNITS)
    with pytest.raises(AnswerParseError):
        generate(b, _Raw('{"reasoning": "", "answer": "x"}'))
    with pytest.raises(AnswerParseError) as ei:
        generate(b, _Raw("garbage"))
    assert ei.value.latency_s is not None


def _remote(handler, retries=2):
    client = httpx.Client(transport=httpx.MockTransport(handler))
    return RemoteChatClient(ChatClientSpec("http://chat.test", model="m1", max_retries=retries), client=client)


def test_remote_request_shape():
    seen = {}

    def handler(request):
        seen.update(json.loads(request.content))
        return httpx.Response(200, json={"text": '{"reasoning":"ok","answer":"B5"}'})

    b = compose_prompt("q", [FusedHit(IMG.unit_id, 1 / 61, 1)], UNITS, {"Chart_001": ASSET})
    ans = generate(b, _remote(handler))
    assert ans.answer == "B5"
    assert seen["model"] == "m1" and seen["prompt"] == b.text
    assert seen["attachments"] == [
        {"data": base64.b64encode(ASSET.bytes).decode(), "media_type": "image/png", "unit_id": IMG.unit_id}
    ]


def test_remote_timeout_retries_then_errors(monkeypatch):
    monkeypatch.setattr("frtr.reasoner.time.sleep", lambda s: None)
    calls = []

    def handler(request):
        calls.append(1)
        raise httpx.ReadTimeout("slow")

    with pytest.raises(GenerationError) as ei:
        generate(compose_prompt("q", [], UNITS), _remote(handler))
    assert ei.value.retryable and ei.value.attempts == 3 and len(calls) == 3


def test_remote_refusal_is_distinct():
    with pytest.raises(ContentRefusalError):
        _remote(lambda r: httpx.Response(451)).complete(compose_prompt("q", [], UNITS))
    with pytest.raises(ContentRefusalError):
        _remote(lambda r: httpx.Response(200, json={"refusal": "no"})).complete(compose_prompt("q", [], UNITS))


def test_remote_auth_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(403)

    with pytest.raises(GenerationError) as ei:
        _remote(handler).complete(compose_prompt("q", [], UNITS))
    assert not ei.value.retryable and len(calls) == 1
