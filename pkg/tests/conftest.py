import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from playereval.crossfit import make_folds
from playereval.simulation import exact_dataset, exact_nuisances, load_fixture

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def four_cell():
    return load_fixture("four-cell")


@pytest.fixture(scope="session")
def four_cell_flat():
    return load_fixture("four-cell-flat")


@pytest.fixture(scope="session")
def ten_cell():
    return load_fixture("ten-cell")


@pytest.fixture(scope="session")
def exact_four_cell(four_cell):
    """Balanced 4-cell data (empirical law equals the DGP) with true nuisances."""
    data = exact_dataset(four_cell, 200)
    folds = make_folds(data.n, data.A, 5, seed=0, m=data.m)
    return data, folds, exact_nuisances(four_cell, data, folds)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
