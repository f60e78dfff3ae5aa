import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mvcage.basis import fourier_basis, oc_orthogonalize
from mvcage.covariance import BivariateMaternParams, build_joint_cov
from mvcage.geometry import build_grid

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=300,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def grid100():
    return build_grid((0.0, 1.0), 100)


@pytest.fixture(scope="session")
def oc100(grid100):
    return oc_orthogonalize(fourier_basis(grid100, 10), grid100)


@pytest.fixture(scope="session")
def matern100(grid100):
    return build_joint_cov(grid100, BivariateMaternParams.simulation_defaults())


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[key])
