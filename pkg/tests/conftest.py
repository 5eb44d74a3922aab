import numpy as np
import pytest

from gscl.graph import Graph, erdos_renyi

_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Append one pass/fail line per acceptance criterion; printed at session end."""
    return _ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def path_graph():
    return Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)], np.eye(4), [0, 1, 0, 1])


@pytest.fixture
def small_graph():
    return erdos_renyi(12, 0.25, seed=3, num_classes=3, feature_dim=5)
