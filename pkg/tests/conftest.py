import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nrulesim.wave_dynamics import Grid1D, Hamiltonian1D, gaussian_packet

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")


@pytest.fixture
def small_grid():
    return Grid1D(-10.0, 10.0, 401)


@pytest.fixture
def packet(small_grid):
    return gaussian_packet(small_grid, 0.0, 1.0)


@pytest.fixture
def free_h(small_grid):
    return Hamiltonian1D.free(small_grid)


def binomial_z(k: int, n: int, p: float) -> float:
    return abs(k / n - p) / np.sqrt(p * (1 - p) / n)
