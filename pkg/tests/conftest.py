import pytest

# Filled by tests/test_acceptance.py; one line per criterion.
ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance_line():
    def record(number, ok, detail):
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {status}  {detail}"
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
