from __future__ import annotations

import numpy as np
import pytest

from funclust.model import MetricMatrix


def make_matrix(owner, columns, names=None, start=0, step=300):
    cols = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    names = names or tuple(f"m{i}" for i in range(cols.shape[1]))
    return MetricMatrix(owner, tuple(names), cols, start + step * np.arange(cols.shape[0]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
