import sys
from pathlib import Path

import pytest

# make the oracle module importable as a plain module
sys.path.insert(0, str(Path(__file__).parent))

from spinenav.synthetic import box_surface  # noqa: E402


@pytest.fixture
def cube():
    return box_surface((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))


@pytest.fixture
def cube10():
    return box_surface((0.0, 0.0, 0.0), (10.0, 10.0, 10.0))


_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion."""

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})"
        _CRITERIA.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
