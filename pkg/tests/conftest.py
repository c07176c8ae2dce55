from __future__ import annotations

import numpy as np
import pytest

from patchyhjb import harness
from patchyhjb.partition import build_atlas
from patchyhjb.problem import LQR2D, HuntKrenerTestProblem


def pytest_addoption(parser):
    parser.addoption("--seed", type=int, default=20240613, help="seed for randomized tests")


@pytest.fixture
def rng(request):
    return np.random.default_rng(request.config.getoption("--seed"))


@pytest.fixture(scope="session")
def test_problem():
    return HuntKrenerTestProblem()


@pytest.fixture(scope="session")
def lqr():
    return LQR2D()


@pytest.fixture(scope="session")
def repro_atlas():
    """The 73-patch configuration used for the error-grid reproduction."""
    return harness.solve(harness.parse_config(harness.REPRODUCTION_CONFIG))


@pytest.fixture(scope="session")
def doubling_atlas():
    return harness.solve(harness.parse_config(harness.DOUBLING_CONFIG))


@pytest.fixture(scope="session")
def lqr_atlas(lqr):
    return build_atlas(lqr, 3, 0.5, 3, albrekht_radius=0.25, counts=[8, 12, 16])


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
