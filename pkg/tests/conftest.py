import numpy as np
import pytest

from pmcf.grid import TorusGrid, constant_field
from pmcf.well import WellSpec, sigma_constant


@pytest.fixture(scope="session")
def well():
    return WellSpec()


@pytest.fixture(scope="session")
def sigma(well):
    return sigma_constant(well)


@pytest.fixture
def grid1d():
    return TorusGrid((128,), (4.0,))


@pytest.fixture
def grid2d():
    return TorusGrid((48, 48), (2.0, 2.0))


@pytest.fixture
def ones_forcing(grid2d):
    return constant_field(grid2d, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
