import numpy as np
import pytest

from segslab.diffusion import default_prior, linear_schedule
from segslab.distill import default_rig
from segslab.guidance import build_basis_bank, make_feature_extractor


@pytest.fixture(scope="session")
def prior():
    return default_prior()


@pytest.fixture(scope="session")
def schedule():
    return linear_schedule(1000)


@pytest.fixture(scope="session")
def short_schedule():
    return linear_schedule(50)


@pytest.fixture(scope="session")
def fx():
    return make_feature_extractor()


@pytest.fixture(scope="session")
def rig():
    return default_rig()


@pytest.fixture(scope="session")
def bank(prior, schedule, fx):
    return build_basis_bank(prior, schedule, fx, "back", N=20, n_components=8, k=3,
                            seed=0, stride=1)


@pytest.fixture(scope="session")
def short_bank(prior, short_schedule, fx):
    return build_basis_bank(prior, short_schedule, fx, "back", N=20, n_components=8, k=3,
                            seed=0, stride=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
