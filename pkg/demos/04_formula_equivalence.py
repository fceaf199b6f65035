"""Score answers that differ in form but agree in value.

Numbers are compared after stripping currency and separators; formulas
are evaluated against the workbook when both sides are formulas or refs.
"""

from frtr.bench import check_answer, parse_provenance
from frtr.formula import eval_formula
from frtr.workbook import Cell, CellAddress, Sheet, Workbook

cells = [Cell(CellAddress("Sales", 2, r), float(r * 10)) for r in range(2, 11)]
cells += [Cell(CellAddress("Costs", 3, r), float(r)) for r in range(2, 6)]
wb = Workbook("demo", (Sheet.from_cells("Sales", cells[:9]), Sheet.from_cells("Costs", cells[9:])))

print("SUM(B2:B10)                 =", eval_formula("SUM(B2:B10)", wb, "Sales"))
print("SUM(Sales!B2:B3, Costs!C5)  =", eval_formula("SUM(Sales!B2:B3, Costs!C5)", wb))

pairs = [
    ("SUM(B2:B10)", "SUM(B2:B5)+SUM(B6:B10)", parse_provenance("Sales!B2:B10")),
    ("$12,450,000", "12450000", ()),
    ("Sales!B4", "Sales!B5", parse_provenance("Sales!B5")),
    ("increasing ", "Increasing", ()),
]
for predicted, gold, prov in pairs:
    v = check_answer(predicted, gold, prov, wb)
    print(f"{predicted!r:>16} vs {gold!r:<26} -> {'accept' if v.correct else 'reject'} ({v.matched_by})")
