import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from utilsignal.sharing import Session

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(params=[True, False], ids=["mali", "semi"])
def sess(request):
    return Session(4, authenticated=request.param, seed=7)


@pytest.fixture
def msess():
    return Session(4, authenticated=True, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
