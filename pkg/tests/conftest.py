import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from tabground.table import AttentionStandard, CellMask, MaskSource, Table

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# cell text that exercises the escapes
cell_text = st.text(alphabet=st.sampled_from(list("ab xyz019.,-|\\\n\r%é")), max_size=8)


@st.composite
def tables(draw, max_rows=10, max_cols=10, min_rows=0):
    n_cols = draw(st.integers(1, max_cols))
    cols = draw(st.lists(cell_text.filter(lambda s: s != ""), min_size=n_cols, max_size=n_cols, unique=True))
    n_rows = draw(st.integers(min_rows, max_rows))
    rows = [tuple(draw(st.lists(cell_text, min_size=n_cols, max_size=n_cols))) for _ in range(n_rows)]
    return Table(tuple(cols), tuple(rows))


def random_table(rng: np.random.Generator, n_rows: int, n_cols: int) -> Table:
    cols = tuple(f"c{j}" for j in range(n_cols))
    rows = tuple(tuple(f"v{int(rng.integers(0, 1000))}" for _ in cols) for _ in range(n_rows))
    return Table(cols, rows)


def random_standard(rng, rid: str, n_rows=6, n_cols=4, dataset="synth") -> AttentionStandard:
    table = random_table(rng, n_rows, n_cols)
    bits = np.zeros((n_rows, n_cols), dtype=np.uint8)
    k = int(rng.integers(1, n_rows * n_cols // 2 + 1))
    bits.ravel()[rng.choice(n_rows * n_cols, size=k, replace=False)] = 1
    return AttentionStandard(rid, dataset, f"question {rid}", table, CellMask(bits, MaskSource.ORACLE))


@pytest.fixture
def plants() -> Table:
    """Small power-plant table with three Algeria rows."""
    return Table(
        ("Name", "Country", "Capacity (MW)"),
        (
            ("Hassi R'Mel", "Algeria", "150"),
            ("Ain Beni Mathar", "Morocco", "472"),
            ("Kuraymat", "Egypt", "140"),
            ("Tlemcen", "Algeria", "1,200"),
            ("Ouarzazate", "Morocco", "580"),
            ("Adrar", "Algeria", "20"),
        ),
    )


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
