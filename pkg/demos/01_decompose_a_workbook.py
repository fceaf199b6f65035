"""Turn a small workbook into retrievable units.

A sheet is cut four ways: each row, each column, square windows sized
from the cell count, and one unit per embedded picture. Run:

    python demos/01_decompose_a_workbook.py
"""

import tempfile
from pathlib import Path

from frtr.decompose import DecomposeConfig, decompose_workbook, window_size
from frtr.xlsx import ingest_workbook
from frtr.xlsx_writer import Formula, Picture, SheetData, encode_png, write_xlsx

tmp = Path(tempfile.mkdtemp())
rows = [["Region", "Q1", "Q2", "Total"]]
for i, region in enumerate(["North", "South", "East", "West"], start=2):
    rows.append([region, 100 * i, 120 * i, Formula(f"B{i}+C{i}", 220 * i)])

gradient = [[(x * 8, y * 8, 128) for x in range(32)] for y in range(32)]
chart = Picture("Chart_001", encode_png(gradient), column=6, row=2, caption="Increasing quarterly revenue")
path = write_xlsx(tmp / "regions.xlsx", [SheetData("Sales", rows, pictures=[chart])])

wb = ingest_workbook(path)
sheet = wb.sheets[0]
print(f"read {path.name}: sheet {sheet.name!r}, {len(sheet.cells)} cells, {len(wb.images)} image")

# with 20 cells and a target of 5 windows, the side is 2
print("window side for 20 cells, target 5:", window_size(20, 5))

for unit in decompose_workbook(wb, DecomposeConfig(k_target=5)):
    print(f"\n[{unit.kind}] {unit.unit_id}  span={unit.span}")
    print("  " + unit.text.replace("\n", "\n  "))
