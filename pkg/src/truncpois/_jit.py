"""Numba switch.

Set ``TRUNCPOIS_DISABLE_JIT=1`` to run every kernel through its pure-numpy
implementation instead (handy for debugging, or where numba is unavailable).
"""

import os

_FLAG = os.environ.get("TRUNCPOIS_DISABLE_JIT", "").strip().lower()
JIT_ENABLED = _FLAG not in ("1", "true", "yes", "on")

try:
    from numba import njit as _numba_njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False
    JIT_ENABLED = False


def njit(func=None, **kwargs):
    """``numba.njit`` when numba is importable, identity otherwise.

    Kernels are always compiled lazily so the numpy path never pays for it.
    """
    if not HAVE_NUMBA:
        if func is not None:
            return func
        return lambda f: f
    kwargs.setdefault("cache", True)
    if func is not None:
        return _numba_njit(**kwargs)(func)
    return _numba_njit(**kwargs)
