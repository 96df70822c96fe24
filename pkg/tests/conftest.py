import numpy as np
import pytest

from bideepkriging.spatial import BivariateObservations, SiteSet


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_obs(rng):
    s = SiteSet(rng.uniform(size=(12, 2)))
    return BivariateObservations(s, rng.normal(size=12), rng.normal(size=12))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
