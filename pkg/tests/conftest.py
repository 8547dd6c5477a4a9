import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from incentive_routing.library import braess, pigou, sioux_falls  # noqa: E402


@pytest.fixture
def braess_quadratic():
    return braess("quadratic")


@pytest.fixture
def braess_quartic():
    return braess("quartic")


@pytest.fixture
def pigou_net():
    return pigou()


@pytest.fixture(scope="session")
def sioux_edges_only():
    return sioux_falls(node_costs=None)


@pytest.fixture(scope="session")
def sioux_full():
    return sioux_falls()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(RESULTS, key=str):
            terminalreporter.write_line(RESULTS[key])
