"""Shared pytest wiring: collects acceptance-criterion results and prints
one PASS/FAIL line per criterion in the terminal summary (visible even
with output capture on)."""

import pytest

CRITERION_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance-criterion outcome; returns ok for asserting."""

    def record(num: int, desc: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {num:>2}: {'PASS' if ok else 'FAIL'} - {desc}"
        if detail:
            line += f" [{detail}]"
        CRITERION_LINES[num] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for num in sorted(CRITERION_LINES):
            terminalreporter.write_line(CRITERION_LINES[num])
