import numpy as np
import pytest

from constraintmaps.geometry import Ball
from constraintmaps.grid import GridDomain, MapField


@pytest.fixture(scope="session")
def disk64():
    return GridDomain(2, 1 / 64)


@pytest.fixture(scope="session")
def disk128():
    return GridDomain(2, 1 / 128)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def identity_field(domain):
    return MapField.from_function(domain, lambda X: X.copy())


@pytest.fixture(scope="session")
def ball05():
    return Ball(0.5, 2)


# one line per acceptance criterion, echoed again in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
