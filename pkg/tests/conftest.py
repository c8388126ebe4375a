import numpy as np
import pytest

from smp_perturb import catalog


@pytest.fixture
def M1():
    return catalog.m1()


@pytest.fixture
def M2():
    return catalog.m2()


@pytest.fixture
def cycle():
    return catalog.cycle3()


@pytest.fixture
def two_step():
    return catalog.two_step_holding()


@pytest.fixture(scope="session")
def small_randoms():
    return catalog.random_models(7, 6)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash[ACCEPTANCE]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.line(line)
