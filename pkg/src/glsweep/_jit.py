"""Optional numba acceleration.

Hot kernels are written twice: a loop version compiled with ``numba.njit``
and a vectorised pure-numpy version. ``GLSWEEP_JIT=0`` (or a missing numba)
selects the numpy path everywhere. Both implementations stay importable so
tests and benchmarks can compare them directly.
"""

from __future__ import annotations

import os

_FLAG = os.environ.get("GLSWEEP_JIT", "1").strip().lower()

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and _FLAG not in ("0", "false", "no", "off")


def njit(func=None, **kwargs):
    """``numba.njit(cache=True, nogil=True)`` or a no-op without numba."""
    opts = {"cache": True, "nogil": True}
    opts.update(kwargs)

    def wrap(f):
        if not HAS_NUMBA:
            return f
        return numba.njit(**opts)(f)

    if func is not None:
        return wrap(func)
    return wrap


def pick(jitted, fallback):
    """Return the implementation selected by the environment flag."""
    return jitted if USE_NUMBA else fallback


def active_path() -> str:
    return "numba" if USE_NUMBA else "numpy"
