import numpy as np
import pytest

from kinlmc.potentials import make_gaussian


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def gauss4():
    return make_gaussian([0.1, 0.4, 0.7, 1.0])


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
