"""Generate a synthetic benchmark per tier and print the summary table.

Every generated question hides a unique token next to its answer, and a
sidecar plant map records which unit holds it, so retrieval can be
checked independently of the answerer.
"""

import tempfile
from pathlib import Path

from frtr.bench import GenSpec, generate_bench, load_bench, load_plant_map, plant_map_path, render_table, run_eval
from frtr.decompose import DecomposeConfig
from frtr.embedding import HashingEmbedder
from frtr.pipeline import index_workbooks
from frtr.reasoner import MockAnswerClient

tmp = Path(tempfile.mkdtemp())
emb = HashingEmbedder()
reports = []
for tier, rows in (("easy", 1200), ("medium", 8000), ("hard", 25000)):
    path = generate_bench(GenSpec(tier=tier, n_rows=rows, n_questions=10, seed=0), tmp / f"{tier}.xlsx")
    wb, cases = load_bench(path)
    index = index_workbooks([wb], emb, DecomposeConfig(exclude_sheets=("Questions",))).index
    report = run_eval(index, cases, emb, MockAnswerClient(index.unit), workbook=wb, label=tier)
    plants = load_plant_map(plant_map_path(path))
    found = sum(p.gold_unit_ids[0] in r.chunks for p, r in zip(plants, report.per_case))
    print(f"{tier:6s} {len(index):6d} units, gold unit retrieved for {found}/{len(cases)}")
    reports.append(report)

print()
print(render_table(reports))
