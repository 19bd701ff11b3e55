"""Backend switch for the compiled kernels.

Set ``ERGODIC_LAB_NUMBA=0`` to force the pure-numpy path. When numba is
missing the numpy path is used regardless of the flag.
"""
import os

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAS_NUMBA = False


def numba_enabled():
    flag = os.environ.get("ERGODIC_LAB_NUMBA", "1").strip().lower()
    return HAS_NUMBA and flag not in ("0", "false", "no", "off")


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAS_NUMBA:
        return numba.njit(*args, cache=True, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn
