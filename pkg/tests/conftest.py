import numpy as np
import pytest

from util import cube_mesh


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


@pytest.fixture(scope="session")
def cube6():
    return cube_mesh(1, gamma0=("x-", "x+", "y-", "y+", "z-", "z+"))


@pytest.fixture(scope="session")
def cube48():
    return cube_mesh(2, gamma0=("x-",), gamma1=("x+",))


@pytest.fixture(scope="session")
def cube48_supported():
    return cube_mesh(2, gamma0=("x-", "x+", "y-", "y+", "z-", "z+"))


@pytest.fixture(scope="session")
def cube384():
    return cube_mesh(4, gamma0=("x-",), gamma1=("x+",))
