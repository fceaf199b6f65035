"""Dense and BM25 search over the same units, fused by reciprocal rank.

Shows each ranked list on its own and the fused result, where a unit
found by both searches is labelled "Both".
"""

from frtr.decompose import Unit
from frtr.embedding import HashingEmbedder
from frtr.index import RetrievalConfig, build_index, fuse_rrf, retrieve, search_dense, search_lexical

texts = [
    "ROW_2 [Ledger]: Account=Travel | Amount=1200 | Memo=conference trip",
    "ROW_3 [Ledger]: Account=Payroll | Amount=54000 | Memo=monthly salaries",
    "ROW_4 [Ledger]: Account=Travel | Amount=310 | Memo=taxi receipts",
    "ROW_5 [Ledger]: Account=Software | Amount=980 | Memo=annual licence",
    "COL_B [Ledger] (Amount): r2=1200 | r3=54000 | r4=310 | r5=980",
]
units = [Unit(f"Ledger!row:{i}", "row", "Ledger", f"A{i}:C{i}", t) for i, t in enumerate(texts, start=2)]
emb = HashingEmbedder()
index = build_index(units, emb.embed_batch(units))

query = "travel taxi amount"
dense = search_dense(index, emb.embed_text(query), 3)
lexical = search_lexical(index, query, 3)
print("dense  :", [(u, round(s, 3)) for u, s in dense])
print("lexical:", [(u, round(s, 3)) for u, s in lexical])

# fusion ignores the raw scores, only positions count
cfg = RetrievalConfig(k_final=4)
for hit in fuse_rrf(dense, lexical, cfg):
    print(f"{hit.unit_id:16s} rrf={hit.rrf_score:.4f} source={hit.source}")

assert fuse_rrf(dense, lexical, cfg) == retrieve(index, query, emb, RetrievalConfig(k_vector=3, k_lexical=3, k_final=4))
