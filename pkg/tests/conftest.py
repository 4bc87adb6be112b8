import numpy as np
import pytest

from alpha_control import spectral as sp


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)


@pytest.fixture(scope="session")
def space4():
    return sp.get_space(4, 0.1)


@pytest.fixture(scope="session")
def space6():
    return sp.get_space(6, 0.1)


@pytest.fixture(scope="session")
def space2():
    return sp.get_space(2, 0.1)


@pytest.fixture(scope="session")
def space1():
    return sp.get_space(1, 0.1)
