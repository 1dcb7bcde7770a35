import numpy as np
import pytest

from groupcal import Dataset


@pytest.fixture
def four_point():
    return Dataset([[0.0], [1.0], [2.0], [3.0]], [0, 1, 1, 1], [0.2, 0.4, 0.6, 0.8])


def random_dataset(rng, n=None, d=None, dup_frac=0.0, levels=None):
    """Random dataset; ``dup_frac`` of rows copy an earlier input (and its prediction)."""
    n = int(rng.integers(1, 101)) if n is None else n
    d = int(rng.integers(1, 4)) if d is None else d
    X = rng.random((n, d))
    if levels:
        X = np.round(X * levels) / levels
    for i in range(1, n):
        if rng.random() < dup_frac:
            X[i] = X[rng.integers(i)]
    _, first, inv = np.unique(X, axis=0, return_index=True, return_inverse=True)
    p = rng.random(len(first))[inv.reshape(-1)]
    y = rng.integers(0, 2, n)
    return Dataset(X, y, p)


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
