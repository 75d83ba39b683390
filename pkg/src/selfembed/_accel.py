"""Optional numba acceleration for the hot inner loops.

Kernels are written once as plain Python loops over numpy arrays. When numba
is importable and ``SELFEMBED_NO_NUMBA`` is unset (or ``0``), they are
compiled with ``numba.njit``; otherwise every public entry point dispatches
to its pure-numpy fallback instead of running the slow interpreted loop.
"""

import os

_DISABLED = os.environ.get("SELFEMBED_NO_NUMBA", "0").lower() not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False
    _njit = None


def njit(func):
    """Compile ``func`` with numba when enabled, else return it untouched."""
    if HAS_NUMBA:
        return _njit(cache=True, nogil=True)(func)
    return func


def use_numba():
    return HAS_NUMBA
