from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from chiralbag.clifford import build_rep

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def rep2():
    return build_rep(2)


@pytest.fixture(scope="session")
def rep3():
    return build_rep(3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
