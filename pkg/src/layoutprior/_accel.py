"""Numba switch.

Set ``LAYOUTPRIOR_NUMBA=0`` to run every kernel through its pure Python /
numpy path. Outputs are identical either way; only speed changes.
"""

import os

_FLAG = os.environ.get("LAYOUTPRIOR_NUMBA", "1").strip().lower()

try:
    if _FLAG in ("0", "false", "no", "off"):
        raise ImportError("disabled by LAYOUTPRIOR_NUMBA")
    from numba import njit as _njit

    NUMBA_ENABLED = True
except ImportError:
    _njit = None
    NUMBA_ENABLED = False


def jit(fn):
    """``njit(cache=True)`` when numba is on, identity otherwise."""
    if _njit is None:
        return fn
    return _njit(cache=True)(fn)
