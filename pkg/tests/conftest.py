import pytest

CRITERIA: dict[int, str] = {}


def record(number: int, ok: bool, detail: str) -> None:
    """Store the one-line verdict for an acceptance criterion."""
    CRITERIA[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(CRITERIA[number])


@pytest.fixture
def criterion():
    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[k])
