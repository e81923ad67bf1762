import sys
from pathlib import Path

import pytest

# the oracle helpers live next to the tests
sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_CRITERIA] = {}


@pytest.fixture
def criterion(request):
    """Record a pass/fail line for an acceptance criterion: ``criterion(number, passed, detail)``."""
    lines = request.config.stash[_CRITERIA]

    def record(number, passed, detail=""):
        lines[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash[_CRITERIA]
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
