import pytest

from metastable_mdp.models import Boundary, RewardKind
from metastable_mdp.schemas import ModelParams, RewardSpec


@pytest.fixture
def params8():
    return ModelParams(L=8, boundary=Boundary.PERIODIC)


@pytest.fixture
def params10():
    return ModelParams(L=10, boundary=Boundary.PERIODIC)


@pytest.fixture
def torus6():
    return ModelParams(L=6, boundary=Boundary.PERIODIC)


@pytest.fixture
def open4():
    return ModelParams(L=4, boundary=Boundary.OPEN)


@pytest.fixture
def r1():
    return RewardSpec(kind=RewardKind.R1)


@pytest.fixture
def r2():
    return RewardSpec(kind=RewardKind.R2, U=1.0)
