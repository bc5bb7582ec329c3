import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from saphys.dataset import DataQualityWarning

settings.register_profile(
    "saphys", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("saphys")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def quiet():
    """Silence data-quality warnings for tests that are not about them."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DataQualityWarning)
        yield
