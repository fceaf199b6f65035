from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from frtr.bench import GenSpec, generate_bench, load_bench, load_plant_map, plant_map_path  # noqa: E402
from frtr.decompose import DecomposeConfig  # noqa: E402
from frtr.embedding import HashingEmbedder  # noqa: E402
from frtr.pipeline import index_workbooks  # noqa: E402
from frtr.workbook import Cell, CellAddress, Sheet, Workbook  # noqa: E402


def make_sheet(name: str, grid, images=(), origin=(1, 1)) -> Sheet:
    """Sheet from a list of rows; ``None`` and ``""`` are blanks."""
    col0, row0 = origin
    cells = []
    for r, row in enumerate(grid):
        for c, v in enumerate(row):
            if v is None or v == "":
                continue
            cells.append(Cell(CellAddress(name, col0 + c, row0 + r), v))
    return Sheet.from_cells(name, cells, tuple(images))


def make_workbook(sheets: dict, path: str = "mem.xlsx") -> Workbook:
    return Workbook(path, tuple(make_sheet(n, g) for n, g in sheets.items()))


# -- shared generated bench --------------------------------------------------------


@pytest.fixture(scope="session")
def easy_bench(tmp_path_factory):
    path = generate_bench(GenSpec(tier="easy", seed=0, n_questions=10), tmp_path_factory.mktemp("bench") / "easy.xlsx")
    wb, cases = load_bench(path)
    return path, wb, cases, load_plant_map(plant_map_path(path))


@pytest.fixture(scope="session")
def easy_index(easy_bench):
    _, wb, _, _ = easy_bench
    emb = HashingEmbedder()
    build = index_workbooks([wb], emb, DecomposeConfig(exclude_sheets=("Questions",)), {"kind": emb.kind, "dim": 256})
    return build.index, emb


# -- acceptance reporting ----------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, name): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, name = mark.args
    if rep.when == "setup" and rep.skipped:
        _CRITERIA[n] = (name, "SKIP")
    elif rep.when == "call":
        _CRITERIA[n] = (name, "SKIP" if rep.skipped else ("PASS" if rep.passed else "FAIL"))
    elif rep.when == "setup" and rep.failed:
        _CRITERIA[n] = (name, "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        name, status = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n} ({name}): {status}")


# -- random corpora ------------------------------------------------------------------

VOCAB = [f"w{i}" for i in range(40)] + ["revenue", "total", "q4", "north", "south"]


def random_units(rng, n: int):
    """``n`` row units over a small vocabulary so terms repeat across documents."""
    from frtr.decompose import Unit

    units = []
    for i in range(n):
        words = [rng.choice(VOCAB) for _ in range(rng.randint(1, 25))]
        units.append(Unit(f"S!row:{i:05d}", "row", "S", f"A{i + 1}:B{i + 1}", " ".join(words)))
    rng.shuffle(units)
    return units


def random_vectors(rng, n: int, dim: int):
    """Unit-norm float32 rows, with some exact duplicates to exercise tie-breaking."""
    import numpy as np

    gen = np.random.default_rng(rng.randrange(2**32))
    m = gen.standard_normal((n, dim))
    for i in range(0, n, 7):
        m[i] = m[0]
    m /= np.linalg.norm(m, axis=1, keepdims=True)
    return m.astype(np.float32)
