"""Numba switch.

Hot kernels are written twice: an ``@njit`` loop version and a vectorised
numpy version. ``SLID_BENCH_NUMBA=0`` (or numba missing) selects numpy.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional speedup
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get("SLID_BENCH_NUMBA", "1").lower() not in (
    "0",
    "false",
    "no",
    "off",
)


def njit(fn):
    """``numba.njit(cache=True)`` when numba is importable, else identity."""
    if numba is None:  # pragma: no cover
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
