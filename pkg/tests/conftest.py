import numpy as np
import pytest

import factories


@pytest.fixture(scope="session")
def tiny_cnn():
    return factories.make_tiny_cnn()


@pytest.fixture(scope="session")
def region_case():
    """Deterministic (model, input, region) triple on a 16x16 grid."""
    return factories.make_region_instance(seed=100)


@pytest.fixture
def rng():
    return np.random.default_rng(123)
