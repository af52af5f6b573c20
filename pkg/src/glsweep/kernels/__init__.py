"""Dense kernel backends.

``reference`` is the textbook implementation, ``optimized`` calls LAPACK/BLAS.
The default comes from ``GLSWEEP_KERNEL_BACKEND`` and is ``optimized``.
"""

from __future__ import annotations

import os
import threading
from collections import Counter

import numpy as np

from ..errors import ConfigError
from .bordered import (
    COLLINEARITY_RTOL,
    STATUS_COLLINEAR,
    STATUS_INDEFINITE_COVARIANCE,
    STATUS_NAMES,
    STATUS_NONFINITE,
    STATUS_OK,
    solve_bordered,
)
from .optimized import OptimizedBackend
from .reference import ReferenceBackend
from .types import EigenPair

BACKENDS = ("reference", "optimized")

_OPS = ("chol_factor", "tri_solve_left", "sym_eig", "cross_product", "gemm_t", "gemm", "small_spd_solve")


def default_backend_name() -> str:
    return os.environ.get("GLSWEEP_KERNEL_BACKEND", "optimized")


def get_backend(name=None):
    """Resolve a backend by name; objects with the kernel methods pass through."""
    if name is None:
        name = default_backend_name()
    if not isinstance(name, str):
        return name
    if name == "reference":
        return ReferenceBackend()
    if name == "optimized":
        return OptimizedBackend()
    raise ConfigError(f"unknown kernel_backend {name!r}; expected one of {BACKENDS}")


class CountingBackend:
    """Wraps a backend and counts kernel calls (thread-safe).

    ``counts['gemm_t:square']`` tracks products whose left operand is square,
    i.e. multiplications of an n x n matrix against a panel.
    """

    def __init__(self, inner):
        self.inner = get_backend(inner)
        self.name = self.inner.name
        self.counts = Counter()
        self._lock = threading.Lock()

    def _bump(self, key):
        with self._lock:
            self.counts[key] += 1

    def __getattr__(self, op):
        fn = getattr(self.inner, op)
        if op not in _OPS:
            return fn

        def counted(*args, **kwargs):
            self._bump(op)
            if op in ("gemm_t", "gemm") and args[0].shape[0] == args[0].shape[1]:
                self._bump(op + ":square")
            return fn(*args, **kwargs)

        return counted

def warm_up(backend=None) -> None:
    """Run every kernel once on a tiny problem.

    The first call of a jitted kernel loads or compiles machine code, which
    allocates interpreter memory unrelated to the problem size. Memory
    measurements call this first so that one-off cost stays out of the peak.
    """
    be = get_backend(backend)
    a = np.array([[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 2.0]])
    lo = be.chol_factor(a)
    x = be.tri_solve_left(lo, np.eye(3, 2, order="F"))
    be.sym_eig(a)
    s = be.cross_product(x)
    be.small_spd_solve(s, be.gemm_t(x, x[:, 0]))
    be.gemm(a, x)
    solve_bordered(s[:1, :1].copy(), x[:1, 0].copy(), x[:, :1].copy(), np.ones(3), np.ones(3), 1.0)


__all__ = [
    "BACKENDS",
    "COLLINEARITY_RTOL",
    "CountingBackend",
    "EigenPair",
    "OptimizedBackend",
    "ReferenceBackend",
    "STATUS_COLLINEAR",
    "STATUS_INDEFINITE_COVARIANCE",
    "STATUS_NAMES",
    "STATUS_NONFINITE",
    "STATUS_OK",
    "get_backend",
    "solve_bordered",
    "warm_up",
]
