"""Compose the answering prompt for a question and answer it offline.

The mock answerer replies with the top chunk's first cell, which is enough
to exercise the JSON reply contract without any model access.
"""

import tempfile
from pathlib import Path

from frtr.bench import GenSpec, generate_bench, load_bench
from frtr.embedding import HashingEmbedder
from frtr.pipeline import index_workbooks
from frtr.decompose import DecomposeConfig
from frtr.reasoner import MockAnswerClient, compose_prompt, generate
from frtr.index import retrieve

path = generate_bench(GenSpec(tier="easy", seed=3, n_questions=4), Path(tempfile.mkdtemp()) / "bench.xlsx")
wb, cases = load_bench(path)
emb = HashingEmbedder()
index = index_workbooks([wb], emb, DecomposeConfig(exclude_sheets=("Questions",))).index

case = cases[0]
hits = retrieve(index, case.question, emb)
bundle = compose_prompt(case.question, hits, index.unit, index.images)
print(f"question: {case.question}")
print(f"prompt: {len(bundle.text)} chars, about {bundle.token_estimate} tokens, {len(bundle.attachments)} images\n")
start = bundle.text.index("Chunk 1 (")
print(bundle.text[start:start + 600], "...\n")

answer = generate(bundle, MockAnswerClient(index.unit))
print("answer   :", answer.answer)
print("reasoning:", answer.reasoning)
print("gold     :", case.gold_answer)

# a cell reference is scored by the value it holds
from frtr.bench import check_answer  # noqa: E402

verdict = check_answer(answer.answer, case.gold_answer, case.provenance, wb)
print("verdict  :", "correct" if verdict.correct else "wrong", f"({verdict.matched_by})")
