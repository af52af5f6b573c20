"""Vendor kernels through scipy's LAPACK/BLAS bindings."""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
from scipy.linalg import blas, lapack

from ..errors import CollinearityError, IndefiniteError, KernelError, SingularError, StructuralError
from .bordered import COLLINEARITY_RTOL
from .types import EigenPair


class OptimizedBackend:
    name = "optimized"

    def chol_factor(self, a, overwrite=False):
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise StructuralError(f"matrix must be square, got shape {a.shape}")
        # a symmetric C-ordered matrix is its own Fortran-ordered transpose
        target = a.T if (a.flags.c_contiguous and not a.flags.f_contiguous) else a
        lo, info = lapack.dpotrf(target, lower=1, clean=1, overwrite_a=int(overwrite))
        if info > 0:
            raise IndefiniteError(
                f"matrix is not positive definite: pivot {info - 1} is non-positive", pivot=int(info - 1)
            )
        if info < 0:
            raise KernelError(f"dpotrf: illegal argument {-info}")
        return lo

    def tri_solve_left(self, lo, b, overwrite=False):
        b = np.asarray(b, dtype=np.float64)
        if b.shape[0] != lo.shape[0]:
            raise StructuralError(f"rhs has {b.shape[0]} rows, factor has order {lo.shape[0]}")
        zero = np.flatnonzero(np.diag(lo) == 0.0)
        if zero.size:
            raise SingularError(f"triangular factor has a zero diagonal at {int(zero[0])}")
        x = sla.solve_triangular(lo, b, lower=True, overwrite_b=overwrite, check_finite=False)
        if overwrite and not np.shares_memory(x, b):
            b[...] = x
            return b
        return x

    def sym_eig(self, a, overwrite=False):
        try:
            w, z = sla.eigh(a, driver="evr", overwrite_a=overwrite, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise KernelError(f"symmetric eigensolver failed: {exc}") from exc
        return EigenPair(w=w, z=z)

    def cross_product(self, a):
        a = np.asarray(a, dtype=np.float64)
        c = blas.dsyrk(1.0, a, trans=1, lower=1)
        iu = np.triu_indices(c.shape[0], 1)
        c[iu] = c.T[iu]
        return c

    def gemm_t(self, a, b):
        if a.shape[0] != b.shape[0]:
            raise StructuralError(f"gemm_t: {a.shape} vs {b.shape}")
        return a.T @ b

    def gemm(self, a, b):
        if a.shape[1] != b.shape[0]:
            raise StructuralError(f"gemm: {a.shape} vs {b.shape}")
        return a @ b

    def small_spd_solve(self, s, rhs, rtol=COLLINEARITY_RTOL):
        s = np.asarray(s, dtype=np.float64)
        lo, info = lapack.dpotrf(s, lower=1, clean=1)
        d = np.diag(lo) ** 2
        if info == 0:
            weak = np.flatnonzero(~(d > rtol * np.diag(s)))
            info = int(weak[0]) + 1 if weak.size else 0
        if info:
            raise CollinearityError(f"system matrix is numerically singular at pivot {info - 1}", pivot=info - 1)
        sol, _ = lapack.dpotrs(lo, rhs, lower=1)
        inv, _ = lapack.dpotri(lo, lower=1)
        return sol, np.diag(inv).copy()
