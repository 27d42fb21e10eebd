import pytest

CRITERIA = []


@pytest.fixture
def criterion():
    """Record one acceptance line; call with (name, passed, detail)."""
    def record(name, passed, detail=""):
        CRITERIA.append((name, bool(passed), detail))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in CRITERIA:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
