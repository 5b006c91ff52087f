"""Numba switch.

Kernels are written in array-style numpy that numba can compile. Setting
``SSAIPW_NO_NUMBA=1`` (or having numba unavailable) runs the same source as
plain numpy instead.
"""

import os

_DISABLED = os.environ.get("SSAIPW_NO_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit as _njit

    USE_NUMBA = True
except ImportError:  # pragma: no cover - exercised through the env flag
    _njit = None
    USE_NUMBA = False


def jit(fn):
    if USE_NUMBA:
        return _njit(cache=True, nogil=True)(fn)
    return fn


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
