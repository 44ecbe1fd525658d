"""Shared pytest plumbing for the suite.

Collects the verdict lines emitted by the acceptance tests and prints them
as a dedicated terminal section, so a run's go/no-go status can be read off
the bottom of the output without scrolling through individual test results.
"""

_ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    """Queue one acceptance verdict line for the end-of-run summary."""
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
