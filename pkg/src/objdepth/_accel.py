"""Kernel acceleration switch.

Hot loops are written once as plain Python over numpy arrays and compiled
with numba's ``njit`` unless ``OBJDEPTH_DISABLE_NUMBA`` is set to a truthy
value (or numba is not importable). Callers then get the vectorised numpy
implementation instead.
"""

import os

_FLAG = "OBJDEPTH_DISABLE_NUMBA"


def _flag_set():
    return os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False


def use_numba():
    """True when the compiled kernels should be used. Re-read on every call."""
    return HAS_NUMBA and not _flag_set()


def njit(func):
    """``numba.njit(cache=False)`` if numba is available, else identity."""
    if not HAS_NUMBA:
        return func
    return numba.njit(cache=False)(func)
