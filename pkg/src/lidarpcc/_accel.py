"""JIT switch for the hot kernels.

Kernels are written once in the subset of Python that numba compiles.  Setting
``LIDARPCC_DISABLE_JIT=1`` in the environment (before import) runs them as
plain Python/numpy instead, which is slow but bit-identical.
"""
import os
import warnings

_flag = os.environ.get("LIDARPCC_DISABLE_JIT", "").strip().lower()
DISABLE_JIT = _flag not in ("", "0", "false", "no")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    if not DISABLE_JIT:
        warnings.warn("numba not importable, falling back to pure numpy kernels")

USE_NUMBA = numba is not None and not DISABLE_JIT


def njit(*args, **kwargs):
    """``numba.njit`` when enabled, identity decorator otherwise."""
    if USE_NUMBA:
        kwargs.setdefault("cache", True)
        kwargs.setdefault("nogil", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def decorator(func):
        return func

    return decorator


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
