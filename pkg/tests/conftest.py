import numpy as np
import pytest

ALPHAS = (1.25, 1.5, 1.75, 2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)

# one line per acceptance criterion, repeated in the terminal summary so it
# shows up without -s
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
