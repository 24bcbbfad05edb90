import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def report_line():
    """Record one line for the acceptance summary printed at session end."""

    def record(number, title, value, tol, passed, note=""):
        status = "PASS" if passed else "FAIL"
        line = f"[{status}] criterion {number:>4}: {title}: {value} (tolerance {tol})"
        if note:
            line += f"  {note}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
