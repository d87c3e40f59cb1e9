"""JIT switch for the hot kernels.

Set ``LEAM_DISABLE_NUMBA=1`` before import to force the pure-numpy paths.
"""
import os
import warnings

_disabled = os.environ.get("LEAM_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    if _disabled:
        raise ImportError
    from numba import njit as _njit

    NUMBA_AVAILABLE = True
except ImportError:
    NUMBA_AVAILABLE = False
    if not _disabled:
        warnings.warn("numba is not available; falling back to numpy kernels")

USE_NUMBA = NUMBA_AVAILABLE


def njit(func):
    """``numba.njit(cache=True)`` when enabled, identity otherwise."""
    if NUMBA_AVAILABLE:
        return _njit(cache=True, nogil=True)(func)
    return func


__all__ = ["njit", "NUMBA_AVAILABLE", "USE_NUMBA"]
