import numpy as np
import pytest

from sstsne.dataset import make_synthetic_gaussians


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def blobs2():
    """Two well-separated Gaussian classes, 2-D features."""
    return make_synthetic_gaussians(2, 20, 2, separation=20.0, noise=0.5, seed=7)


@pytest.fixture
def blobs3():
    """Three separated classes in 8-D, enough samples for session tests."""
    return make_synthetic_gaussians(3, 30, 8, separation=15.0, noise=1.0, seed=3)
