import pytest

_VERDICTS: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record a one-line pass/fail verdict for an acceptance criterion."""

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        _VERDICTS[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[n])
