"""Backend selection for the compiled kernels.

Hot loops are written twice: a numba ``@njit`` version and a vectorised numpy
version.  The numba path is used when numba imports cleanly and the
environment variable ``SRQR_DISABLE_NUMBA`` is unset or ``0``.  Both paths
are deterministic and agree to rounding error.
"""
import os
import warnings

DISABLE_ENV = "SRQR_DISABLE_NUMBA"

try:
    import numba as _numba
    from numba import njit, prange
    HAVE_NUMBA = True
    # probe OpenMP first: an outdated system TBB otherwise warns on first use
    _numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None
    HAVE_NUMBA = False
    prange = range

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn
        return wrap


def numba_enabled():
    """Return True when the numba kernels should be used."""
    flag = os.environ.get(DISABLE_ENV, "0").strip().lower()
    return HAVE_NUMBA and flag in ("", "0", "false", "no")


def backend_name():
    return "numba" if numba_enabled() else "numpy"


def set_threads(n):
    """Cap numba's worker pool; a no-op without numba."""
    if HAVE_NUMBA and n is not None and n > 0:
        n = min(int(n), _numba.config.NUMBA_NUM_THREADS)
        with warnings.catch_warnings():
            # threading-layer probing warns about an old system TBB and falls back
            warnings.simplefilter("ignore", _numba.NumbaWarning)
            _numba.set_num_threads(n)
