import pytest

_ACCEPTANCE: list[str] = []


@pytest.fixture
def record_criterion():
    """Record a one-line PASS/FAIL summary for the acceptance report."""

    def record(name: str, ok: bool, detail: str) -> bool:
        _ACCEPTANCE.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
