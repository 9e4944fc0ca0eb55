import pytest

_LINES: list[str] = []


@pytest.fixture
def report_line():
    """Record one PASS/FAIL line for the terminal summary and return the flag."""

    def record(label: str, ok: bool, detail: str) -> bool:
        _LINES.append(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
