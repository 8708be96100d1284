import numpy as np
import pytest

from twolayer_ebm.model import ModelParams


@pytest.fixture
def default_params():
    """Bistable scenario: three equilibria at lam = 0."""
    return ModelParams()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
