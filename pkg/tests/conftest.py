import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from brusselator.model import Parameters
from brusselator.spectral import DomainSpec, build_basis

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def prm():
    return Parameters()


@pytest.fixture(scope="session")
def line_domain():
    return DomainSpec((math.pi,))


@pytest.fixture(scope="session")
def basis32(line_domain):
    return build_basis(line_domain, 32)


@pytest.fixture(scope="session")
def basis8(line_domain):
    return build_basis(line_domain, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
