import numpy as np
import pytest

from ckksfault import ckks
from ckksfault.params import get_preset


@pytest.fixture(scope="session")
def desk1():
    return get_preset("DESK1")


@pytest.fixture(scope="session")
def desk3():
    return get_preset("DESK3")


@pytest.fixture(scope="session")
def desk1_keys(desk1):
    return ckks.keygen(desk1, seed=1001, rot_steps=(1, 3, 5))


@pytest.fixture(scope="session")
def desk3_keys(desk3):
    return ckks.keygen(desk3, seed=1003, rot_steps=(3,))


@pytest.fixture()
def rng():
    return np.random.default_rng(0xC0FFEE)
