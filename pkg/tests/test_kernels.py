import os
import subprocess
import sys

import numpy as np
import pytest

from srqr import _accel, kernels
from srqr.ccdist import sphere_invariants
from srqr.manifolds import random_sphere

needs_numba = pytest.mark.skipif(not _accel.numba_enabled(), reason="numba disabled")


@needs_numba
def test_sphere_distance_backends_agree(rng):
    z, w = random_sphere(rng, 500), random_sphere(rng, 500)
    w[:10] = z[:10] * np.exp(1j * np.linspace(0, np.pi, 10))[:, None]
    m, sp, psi = sphere_invariants(z, w)
    a = kernels.sphere_distance_nb(m, sp, psi)
    b = kernels.sphere_distance_np(m, sp, psi)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


@needs_numba
@pytest.mark.parametrize("s_end", [1.0, -0.7])
def test_flow_backends_agree(rng, s_end):
    z = random_sphere(rng, 24)
    z = z[np.min(np.abs(z), axis=-1) > 0.2]
    z = np.abs(z) * np.exp(0.3j * np.angle(z))  # inside the angular domain
    z = np.ascontiguousarray(z[:, None, :])
    c = np.sqrt(0.5)
    args = (z, s_end, np.log(2.0), complex(c), complex(c), 0.1, 0.3, 1e-9, 0.05, 100000)
    a = kernels.flow_bundles_nb(*args)
    b = kernels.flow_bundles_np(*args)
    np.testing.assert_allclose(a[0], b[0], atol=1e-12)
    for x, y in zip(a[1:], b[1:]):
        np.testing.assert_array_equal(x, y)


def test_backend_switch_by_environment():
    code = "import srqr; print(srqr.backend_name())"
    env = dict(os.environ, **{_accel.DISABLE_ENV: "1"})
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True).stdout.strip()
    assert out == "numpy"


def test_set_threads_is_safe():
    _accel.set_threads(1)
    assert _accel.backend_name() in ("numba", "numpy")
