import os
import sys
import pytest
import numpy as np

# Ensure repository root is on sys.path so `pyFedFlow` can be imported
REPO_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
if REPO_ROOT not in sys.path:
    sys.path.insert(0, REPO_ROOT)

import pyFedFlow as pff


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run desk-scale experiment tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale experiment, only runs with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def coarse_params():
    """KS constants with a coarse step so trajectories are cheap to produce."""
    return pff.KSParams(dt=0.05, transient_start=-50.0)


@pytest.fixture(scope="session")
def short_trajectory(coarse_params):
    u0 = pff.random_initial_condition(coarse_params)
    transient = pff.simulate(coarse_params, u0, coarse_params.transient_start, 0.0)
    return pff.simulate(coarse_params, transient.snapshots[-1], 0.0, 100.0)


@pytest.fixture(scope="session")
def splits(short_trajectory, coarse_params):
    """Physical-unit splits: 320 train, 80 validation, 200 test rows."""
    test = pff.simulate(coarse_params, short_trajectory.snapshots[-1], 100.0, 150.0)
    return pff.build_splits(short_trajectory, test, 0.8)


@pytest.fixture()
def small_spec():
    return pff.ArchitectureSpec(input_dim=64, latent_dim=4, hidden_dims=(16,))
