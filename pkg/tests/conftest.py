import numpy as np
import pytest

from uniqshap.dataset import CategoricalTable

ACCEPTANCE_LINES = []


@pytest.fixture
def d1():
    """Four subjects, two variables: (A,0), (A,1), (B,0), (B,0)."""
    return CategoricalTable.from_rows([("A", 0), ("A", 1), ("B", 0), ("B", 0)], ["var1", "var2"])


def random_table(rng, n=None, d=None, max_levels=5):
    n = int(rng.integers(10, 201)) if n is None else n
    d = int(rng.integers(2, 7)) if d is None else d
    cols = []
    for _ in range(d):
        k = int(rng.integers(2, max_levels + 1))
        p = rng.dirichlet(np.full(k, 0.7))
        cols.append(rng.choice(k, size=n, p=p))
    return CategoricalTable.from_rows(zip(*cols))


@pytest.fixture
def acceptance_log():
    def record(criterion, ok, detail):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
