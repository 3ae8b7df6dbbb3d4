import numpy as np
import pytest

from qmmnet.scf import run_scf

import helpers


@pytest.fixture(scope="session")
def water():
    system = helpers.water_system()
    qmms, result = run_scf(system)
    return system, qmms, result


@pytest.fixture(scope="session")
def small_config():
    return helpers.small_model_config()


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260825)
