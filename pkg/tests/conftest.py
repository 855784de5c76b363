import numpy as np
import pytest

from htnet.netmodel import build_network, random_network


@pytest.fixture
def single():
    """J = K = 1 with unit rates: every route is forced."""
    return build_network(1, 1, [1.0], [1.0], [[1.0]], [[1.0]])


@pytest.fixture
def symmetric():
    return build_network(2, 2, [1.0, 1.0], [2.0, 2.0], [[0.5, 0.5], [0.5, 0.5]], [[0.5, 0.5], [0.5, 0.5]])


@pytest.fixture
def random_critical():
    return random_network(3, 2, np.random.default_rng(20261016))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
