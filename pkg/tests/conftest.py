import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_criteria: dict[int, str] = {}


@pytest.fixture(scope="session")
def criteria():
    """Record ``criteria[n] = (passed, detail)``; echoed in the terminal summary."""

    class Log:
        def __setitem__(self, n, result):
            ok, detail = result
            line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
            _criteria[n] = line
            print(line)

    return Log()


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_criteria):
            terminalreporter.write_line(_criteria[n])
