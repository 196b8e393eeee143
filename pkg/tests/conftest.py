import copy
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synthetic import ZENG_SAMPLE, write_tree  # noqa: E402


@pytest.fixture
def zeng_sample():
    return copy.deepcopy(ZENG_SAMPLE)


@pytest.fixture(scope="session")
def synthetic_tree(tmp_path_factory):
    return write_tree(tmp_path_factory.mktemp("synthetic"))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
