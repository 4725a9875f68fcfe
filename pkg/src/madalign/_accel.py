"""Numba dispatch.

Set ``MADALIGN_DISABLE_NUMBA=1`` to force the pure-numpy paths, e.g. for
debugging or on platforms without a working LLVM.
"""
import os

_flag = os.environ.get("MADALIGN_DISABLE_NUMBA", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and _flag not in ("1", "true", "yes", "on")


def njit(func):
    """Compile ``func`` in nopython mode; identity when numba is missing."""
    if numba is None:  # pragma: no cover
        return func
    return numba.njit(cache=True, nogil=True)(func)
