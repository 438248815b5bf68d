import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from maskess import testbeds
from maskess.tokens import Codebook

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def chain8():
    return testbeds.chain_joint(8, 2, 4.0)


@pytest.fixture
def onehot2():
    return testbeds.one_hot_codebook(2)


@pytest.fixture
def line_codebook():
    # four 1-D codewords at 0, 1, 3, 6: all pairwise distances differ
    return Codebook([[0.0], [1.0], [3.0], [6.0]])


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
