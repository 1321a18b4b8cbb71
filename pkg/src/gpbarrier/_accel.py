"""Optional numba acceleration.

Set ``GPBARRIER_DISABLE_NUMBA=1`` to force the pure-numpy code paths. The
flag is read once at import time.
"""
import os

_disabled = os.environ.get("GPBARRIER_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _disabled:
        raise ImportError
    from numba import njit
    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        # bare @njit and @njit(...) both resolve to the identity decorator
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn


def use_numba():
    return HAS_NUMBA


def set_threads(n: int) -> None:
    """Cap numba's worker threads; a no-op on the numpy path."""
    if n < 1:
        raise ValueError("thread count must be >= 1")
    if HAS_NUMBA:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
