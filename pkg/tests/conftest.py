import pytest

# filled by the acceptance suite; echoed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def record_criterion():
    """``record(label, passed, detail)`` appends one PASS/FAIL line and prints it."""

    def record(label, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


@pytest.fixture
def unit_disc():
    from pqlab.grid import Disc, build_grid
    return build_grid(Disc(), 64)
