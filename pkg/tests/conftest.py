import numpy as np
import pytest

from bayes_elliptic.mesh import build_disk_mesh

# pass/fail lines collected by the acceptance suite, echoed after the run
CRITERIA_LINES = []


@pytest.fixture(scope="session")
def disk_mesh():
    return build_disk_mesh(1981)


@pytest.fixture(scope="session")
def small_mesh():
    return build_disk_mesh(200)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA_LINES:
            terminalreporter.write_line(line)
