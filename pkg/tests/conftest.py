"""Shared pytest wiring.

The acceptance tests append one PASS/FAIL line per criterion here so the
verdicts survive output capture and show up in the terminal summary.
"""

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
