import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import _report  # noqa: E402
from oracles import river_crossing  # noqa: E402


@pytest.fixture
def river_instance():
    return river_crossing()


@pytest.fixture(scope="session")
def toy():
    from fairflow.simharness import toy_world
    return toy_world()


def pytest_terminal_summary(terminalreporter):
    if _report.LINES:
        terminalreporter.section("acceptance criteria")
        for line in _report.LINES:
            terminalreporter.write_line(line)
