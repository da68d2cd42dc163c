import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import criteria  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if criteria.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(criteria.RESULTS):
            terminalreporter.write_line(criteria.RESULTS[n])
