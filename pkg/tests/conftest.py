"""Shared pytest wiring.

The acceptance tests register a one-line verdict per criterion; the hook
below prints them as a dedicated section at the end of the run so the
pass/fail ledger is visible even though test output is captured.
"""

import pytest

_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def criterion_log():
    return _ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.line(line)
