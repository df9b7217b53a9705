import re

import pytest

_LINES: list[tuple[str, bool, str]] = []


@pytest.fixture(scope="session")
def acceptance():
    """Recorder for acceptance verdicts, printed in the terminal summary."""

    def record(label: str, passed: bool, detail: str) -> None:
        _LINES.append((str(label), bool(passed), detail))

    return record


def _key(label: str):
    m = re.match(r"(\d+)(.*)", label)
    return (int(m.group(1)), m.group(2)) if m else (10**6, label)


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in sorted(_LINES, key=lambda t: _key(t[0])):
        terminalreporter.write_line(f"criterion {label:<4} {'PASS' if ok else 'FAIL'}  {detail}")
