import numpy as np
import pytest

from dkfnet.graph import complete_graph, default_topology, path_graph
from dkfnet.model import Plant, paper5_plant, solve_riccati


@pytest.fixture(scope="session")
def plant5():
    return paper5_plant()


@pytest.fixture(scope="session")
def sol5(plant5):
    return solve_riccati(plant5)


@pytest.fixture(scope="session")
def topo():
    return default_topology()


@pytest.fixture
def path3():
    return path_graph(3)


@pytest.fixture
def k2():
    return complete_graph(2)


def scalar_plant(a=1.0, q=1.0, c=1.0, r=1.0, nodes=1, x0_cov=1.0):
    C = [np.array([[c]]) for _ in range(nodes)]
    R = [np.array([[r]]) for _ in range(nodes)]
    return Plant(np.array([[a]]), np.array([[q]]), C, R, np.zeros(1), np.array([[x0_cov]]))


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion, then assert."""
    def record(number, ok, detail):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
        assert ok, detail
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
