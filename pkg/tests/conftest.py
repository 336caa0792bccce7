"""Shared pytest wiring.

The acceptance gate appends one line per criterion to ``scorecard``; the
summary hook replays those lines after the run so they stay visible even
with output capture enabled.
"""

scorecard: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if scorecard:
        terminalreporter.section("acceptance scorecard")
        for line in scorecard:
            terminalreporter.write_line(line)
