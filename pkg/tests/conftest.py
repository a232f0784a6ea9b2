import numpy as np
import pytest

from alloylab.model import config_from_mapping


def make_config(**overrides):
    base = dict(d=1, l=8, bc="dirichlet", omega_plus=1.0, gamma=[0, 1], a=[1.0, -0.5])
    base.update(overrides)
    return config_from_mapping(base)


@pytest.fixture
def bench_config():
    """d=1 indefinite benchmark site a = (1, -0.5)."""
    return make_config()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_site_array(rng, d, g, a_star):
    """Random cube-supported convolution array with a_0 = 1 and prescribed a*."""
    arr = rng.uniform(-1.0, 1.0, (g + 1,) * d)
    arr.flat[0] = 0.0
    arr *= a_star / np.abs(arr).sum()
    arr.flat[0] = 1.0
    return arr


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
