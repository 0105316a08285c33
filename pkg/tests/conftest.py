import pytest

_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one acceptance criterion as a PASS/FAIL line, then assert it."""

    def check(number, title, ok, detail=""):
        status = "PASS" if ok else "FAIL"
        _CRITERIA.append(f"[{status}] criterion {number}: {title}" + (f" ({detail})" if detail else ""))
        assert ok, f"criterion {number} failed: {detail}"

    return check


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for line in _CRITERIA:
        terminalreporter.write_line(line)
