"""Shared pytest plumbing for the test suite.

The release-acceptance tests record one verdict line per criterion; the
terminal-summary hook replays them at the end of the run so the lines stay
visible regardless of output capture.
"""

import pytest

ACCEPTANCE_VERDICTS = []


def record_verdict(line: str) -> None:
    """Store an acceptance verdict line and echo it to captured stdout."""
    ACCEPTANCE_VERDICTS.append(line)
    print(line)


@pytest.hookimpl(trylast=True)
def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.write_line(line)
