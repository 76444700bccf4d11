import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

# Lines recorded by the acceptance suite, echoed once at the end of the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip("abcd:"))):
            terminalreporter.write_line(line)
