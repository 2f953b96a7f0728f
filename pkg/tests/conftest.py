import numpy as np
import pytest
from hypothesis import settings

from srqr import certify
from srqr.manifolds import random_sphere

settings.register_profile("srqr", max_examples=25, deadline=None)
settings.register_profile("thorough", max_examples=400, deadline=None)
settings.load_profile("srqr")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def interior_points(rng, n, tol=0.1):
    """Random points of S^3 with both |z_j| above ``tol``."""
    z = random_sphere(rng, 4 * n)
    keep = np.min(np.abs(z), axis=-1) > tol
    return z[keep][:n]


@pytest.fixture
def interior(rng):
    return lambda n, tol=0.1: interior_points(rng, n, tol)


@pytest.fixture(scope="session")
def trap():
    return certify.default_trap()
