import numpy as np
import pytest

from rabinovich_lab.orbit_lab import orbit_for_level
from rabinovich_lab.rabinovich import LevelPair, SystemParams, make_context


@pytest.fixture(scope="session")
def beta1():
    return SystemParams(1.0)


@pytest.fixture(scope="session")
def ctx1(beta1):
    return make_context(beta1)


@pytest.fixture(scope="session")
def orbit02(beta1):
    """Reference orbit on (h, c) = (0, 2) at beta = 1."""
    return orbit_for_level(LevelPair(0.0, 2.0), beta1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n])
