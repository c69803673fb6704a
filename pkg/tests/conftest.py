import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# PASS/FAIL lines recorded by test_acceptance, shown after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
