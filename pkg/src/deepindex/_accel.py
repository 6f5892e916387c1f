"""Numba switch.

Kernels are compiled with numba when it is importable and the environment
variable ``DEEPINDEX_DISABLE_NUMBA`` is unset (or ``0``). Otherwise the pure
numpy fallbacks in :mod:`deepindex._kernels` are used.
"""

import os

_flag = os.environ.get("DEEPINDEX_DISABLE_NUMBA", "0").strip().lower()
DISABLED_BY_ENV = _flag not in ("", "0", "false", "no")

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is optional
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not DISABLED_BY_ENV


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAS_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)

    def wrap(fn):
        return fn

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrap


def backend():
    return "numba" if USE_NUMBA else "numpy"
