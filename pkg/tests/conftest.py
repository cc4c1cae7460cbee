from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qfclt import (SourceDistribution, build_covariance, identity_covariance,
                   identity_form)
from qfclt.rng import child_stream


@pytest.fixture
def rademacher5():
    return SourceDistribution.rademacher(5)


@pytest.fixture
def skewed5():
    """Coordinate-product law with atoms {-1, 2} and probabilities {2/3, 1/3}."""
    one = (np.array([-1.0, 2.0]), np.array([2.0 / 3.0, 1.0 / 3.0]))
    return SourceDistribution.coordinate_product([one] * 5)


@pytest.fixture
def eye5():
    return identity_form(5)


@pytest.fixture
def cov5():
    return identity_covariance(5)


@pytest.fixture
def stream():
    def make(kind: str, index: int = 0):
        return child_stream(997, kind, index)
    return make
