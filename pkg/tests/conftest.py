import pytest

from beckerdoring import RateModel


@pytest.fixture
def const2():
    return RateModel.constant(1.0, 1.0, z=2.0)


@pytest.fixture
def const_half():
    return RateModel.constant(1.0, 1.0, z=0.5)


@pytest.fixture
def meta15():
    return RateModel.metastable(A=1.0, alpha=0.0, zs=1.0, q=1.0, gamma=0.5, z=1.5)
