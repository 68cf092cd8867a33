"""Shared fixtures and helpers for the test suite."""

import numpy as np
import pytest

from rldispatch.forecast import ErrorModel
from rldispatch.params import DispatchParams


def sqrt_model(T, scale, law="gaussian"):
    """Error model with sigma(h) = scale * sqrt(h)."""
    sigma = tuple(scale * np.sqrt(h) for h in range(T + 1))
    return ErrorModel(T=T, sigma=sigma, law=law)


def zero_model(T, law="gaussian"):
    """Degenerate zero-variance error model."""
    return ErrorModel(T=T, sigma=(0.0,) * (T + 1), law=law)


@pytest.fixture
def spot_params():
    """The two-period instance d=(10,20), r=5, c=1, q=100."""
    return DispatchParams(T=2, r_up=5.0, r_down=5.0, c=1.0, q=100.0)


@pytest.fixture
def ref_params():
    """Benchmark-scale costs with symmetric ramp 8."""
    return DispatchParams(T=24, r_up=8.0, r_down=8.0, c=50.0, q=2000.0)
