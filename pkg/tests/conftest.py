import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from heatctl.experiments import scenario_preset
from heatctl.kernel import build_transform, solve_kernel

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("fast", deadline=None, max_examples=5)
settings.register_profile("thorough", deadline=None, max_examples=300)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

REFERENCE_QC = np.array([[0.0134, 0.0041, 0.0041],
                         [0.0041, 0.1667, 0.1667],
                         [0.0041, 0.1667, 0.6667]])


@pytest.fixture(scope="session")
def section4():
    return scenario_preset("section4")


@pytest.fixture(scope="session")
def section4_kernel(section4):
    return solve_kernel(section4.a_samples(), section4.c)


@pytest.fixture(scope="session")
def section4_tp(section4_kernel):
    return build_transform(section4_kernel)


@pytest.fixture(scope="session")
def section4_65():
    return scenario_preset("section4").replace(m=65)


@pytest.fixture(scope="session")
def section4_65_tp(section4_65):
    return build_transform(solve_kernel(section4_65.a_samples(), section4_65.c))
