"""Textbook dense kernels: unblocked Cholesky, forward substitution, cyclic
Jacobi eigensolver and plain loop products.

These exist so correctness never hinges on an external LAPACK. Each kernel
has a numba loop version and a numpy-vectorised version.
"""

from __future__ import annotations

import numpy as np

from .._jit import njit, pick
from ..errors import IndefiniteError, KernelError, SingularError, StructuralError
from .bordered import COLLINEARITY_RTOL, spd_solve_textbook
from .types import EigenPair

JACOBI_TOL = 1e-15
JACOBI_MAX_SWEEPS = 60


# -- Cholesky -----------------------------------------------------------------


@njit
def _chol_nb(a, lo):
    n = a.shape[0]
    for j in range(n):
        d = a[j, j]
        for p in range(j):
            d -= lo[j, p] * lo[j, p]
        if not d > 0.0:
            return j
        ljj = np.sqrt(d)
        lo[j, j] = ljj
        for i in range(j + 1, n):
            acc = a[i, j]
            for p in range(j):
                acc -= lo[i, p] * lo[j, p]
            lo[i, j] = acc / ljj
    return -1


def _chol_np(a, lo):
    n = a.shape[0]
    for j in range(n):
        row = lo[j, :j]
        d = a[j, j] - row @ row
        if not d > 0.0:
            return j
        ljj = np.sqrt(d)
        lo[j, j] = ljj
        lo[j + 1 :, j] = (a[j + 1 :, j] - lo[j + 1 :, :j] @ row) / ljj
    return -1


# -- forward substitution -------------------------------------------------------


TRSM_PANEL = 8


@njit
def _trsm_nb(lo, b):
    # forward substitution on panels of TRSM_PANEL right-hand sides, so each
    # row of L is read once per panel rather than once per column
    n, q = b.shape
    pw = TRSM_PANEL
    panel = np.empty((n, pw))
    acc = np.empty(pw)
    for c0 in range(0, q, pw):
        w = min(pw, q - c0)
        for p in range(n):
            for j in range(w):
                panel[p, j] = b[p, c0 + j]
        for i in range(n):
            for j in range(w):
                acc[j] = panel[i, j]
            for p in range(i):
                lip = lo[i, p]
                for j in range(w):
                    acc[j] -= lip * panel[p, j]
            d = lo[i, i]
            for j in range(w):
                panel[i, j] = acc[j] / d
        for p in range(n):
            for j in range(w):
                b[p, c0 + j] = panel[p, j]


def _trsm_np(lo, b):
    n = b.shape[0]
    for i in range(n):
        b[i] = (b[i] - lo[i, :i] @ b[:i]) / lo[i, i]


# -- cyclic Jacobi ----------------------------------------------------------------


@njit
def _jacobi_nb(a, v, tol, max_sweeps):
    """Diagonalise symmetric ``a`` in place, accumulating rotations in ``v``.

    Returns the number of sweeps used, or -1 without convergence.
    """
    n = a.shape[0]
    fro = 0.0
    for i in range(n):
        for j in range(n):
            fro += a[i, j] * a[i, j]
    for sweep in range(max_sweeps):
        off = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    off += a[i, j] * a[i, j]
        if off <= tol * tol * fro:
            return sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for r in range(n):
                    arp = a[r, p]
                    arq = a[r, q]
                    a[r, p] = c * arp - s * arq
                    a[r, q] = s * arp + c * arq
                for r in range(n):
                    apr = a[p, r]
                    aqr = a[q, r]
                    a[p, r] = c * apr - s * aqr
                    a[q, r] = s * apr + c * aqr
                a[p, q] = 0.0
                a[q, p] = 0.0
                for r in range(n):
                    vrp = v[r, p]
                    vrq = v[r, q]
                    v[r, p] = c * vrp - s * vrq
                    v[r, q] = s * vrp + c * vrq
    return -1


def _jacobi_np(a, v, tol, max_sweeps):
    n = a.shape[0]
    fro = float(np.sum(a * a))
    for sweep in range(max_sweeps):
        off = float(np.sum(a * a) - np.sum(np.diag(a) ** 2))
        if off <= tol * tol * fro:
            return sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                colp = a[:, p].copy()
                colq = a[:, q]
                a[:, p] = c * colp - s * colq
                a[:, q] = s * colp + c * colq
                rowp = a[p, :].copy()
                rowq = a[q, :]
                a[p, :] = c * rowp - s * rowq
                a[q, :] = s * rowp + c * rowq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return -1


# -- products ---------------------------------------------------------------------


@njit
def _syrk_nb(a, out):
    n, q = a.shape
    for i in range(q):
        for j in range(i + 1):
            acc = 0.0
            for r in range(n):
                acc += a[r, i] * a[r, j]
            out[i, j] = acc
            out[j, i] = acc


def _syrk_np(a, out):
    q = a.shape[1]
    for j in range(q):
        col = (a[:, j:] * a[:, j : j + 1]).sum(axis=0)
        out[j:, j] = col
        out[j, j:] = col


@njit
def _gemm_t_nb(a, b, out):
    n, q = a.shape
    r = b.shape[1]
    for i in range(q):
        for j in range(r):
            acc = 0.0
            for p in range(n):
                acc += a[p, i] * b[p, j]
            out[i, j] = acc


def _gemm_t_np(a, b, out):
    for j in range(b.shape[1]):
        out[:, j] = (a * b[:, j : j + 1]).sum(axis=0)


IMPLS = {
    "numba": {"chol": _chol_nb, "trsm": _trsm_nb, "jacobi": _jacobi_nb, "syrk": _syrk_nb, "gemm_t": _gemm_t_nb},
    "numpy": {"chol": _chol_np, "trsm": _trsm_np, "jacobi": _jacobi_np, "syrk": _syrk_np, "gemm_t": _gemm_t_np},
}


def _square(a, what):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise StructuralError(f"{what} must be square, got shape {a.shape}")
    return a


class ReferenceBackend:
    """Unblocked textbook kernels."""

    name = "reference"

    def __init__(self, impl: str | None = None):
        self.impl = impl
        table = IMPLS[impl] if impl else {key: pick(IMPLS["numba"][key], IMPLS["numpy"][key]) for key in IMPLS["numba"]}
        self._chol = table["chol"]
        self._trsm = table["trsm"]
        self._jacobi = table["jacobi"]
        self._syrk = table["syrk"]
        self._gemm_t = table["gemm_t"]

    def chol_factor(self, a, overwrite=False):
        a = _square(a, "matrix")
        lo = np.zeros_like(a)
        piv = self._chol(np.ascontiguousarray(a), lo)
        if piv >= 0:
            raise IndefiniteError(f"matrix is not positive definite: pivot {piv} is non-positive", pivot=int(piv))
        if overwrite and a.flags.writeable:
            a[...] = lo
            return a
        return lo

    def tri_solve_left(self, lo, b, overwrite=False):
        lo = _square(lo, "triangular factor")
        b = np.asarray(b, dtype=np.float64)
        vec = b.ndim == 1
        bb = b[:, None] if vec else b
        if bb.shape[0] != lo.shape[0]:
            raise StructuralError(f"rhs has {bb.shape[0]} rows, factor has order {lo.shape[0]}")
        zero = np.flatnonzero(np.diag(lo) == 0.0)
        if zero.size:
            raise SingularError(f"triangular factor has a zero diagonal at {int(zero[0])}")
        out = bb if overwrite else bb.copy()
        self._trsm(lo, out)
        return out[:, 0] if vec else out

    def sym_eig(self, a, overwrite=False):
        a = _square(a, "matrix")
        work = np.array(a, copy=True)
        v = np.eye(a.shape[0])
        sweeps = self._jacobi(work, v, JACOBI_TOL, JACOBI_MAX_SWEEPS)
        if sweeps < 0:
            off = float(np.sqrt(np.sum(work**2) - np.sum(np.diag(work) ** 2)))
            raise KernelError(f"Jacobi eigensolver did not converge in {JACOBI_MAX_SWEEPS} sweeps (off-norm {off:.3g})")
        w = np.diag(work).copy()
        order = np.argsort(w, kind="stable")
        return EigenPair(w=w[order], z=np.asfortranarray(v[:, order]))

    def cross_product(self, a):
        a = np.asarray(a, dtype=np.float64)
        out = np.empty((a.shape[1], a.shape[1]))
        self._syrk(a, out)
        return out

    def gemm_t(self, a, b):
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        vec = b.ndim == 1
        bb = b[:, None] if vec else b
        if a.shape[0] != bb.shape[0]:
            raise StructuralError(f"gemm_t: {a.shape} vs {b.shape}")
        out = np.empty((a.shape[1], bb.shape[1]))
        self._gemm_t(a, bb, out)
        return out[:, 0] if vec else out

    def gemm(self, a, b):
        a = np.asarray(a, dtype=np.float64)
        return self.gemm_t(np.ascontiguousarray(a.T), b)

    def small_spd_solve(self, s, rhs, rtol=COLLINEARITY_RTOL):
        from ..errors import CollinearityError

        s = _square(s, "system matrix")
        sol, invd, piv = spd_solve_textbook(s, np.asarray(rhs, dtype=np.float64), rtol)
        if piv >= 0:
            raise CollinearityError(f"system matrix is numerically singular at pivot {piv}", pivot=piv)
        return sol, invd
