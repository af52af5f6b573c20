"""Per-SNP small SPD solves.

For every SNP in a block the normal-equations matrix

    S = [[S_TL,   *   ],
         [border, corner]]

is assembled (lower triangle only) from the cached top-left block plus the
SNP's border row and corner, factored, and solved. The loop over SNPs is the
innermost loop of both sequence engines, hence the numba path.
"""

from __future__ import annotations

import numpy as np

from .._jit import njit, pick

STATUS_OK = 0
STATUS_COLLINEAR = 1
STATUS_INDEFINITE_COVARIANCE = 2
STATUS_NONFINITE = 3

STATUS_NAMES = {
    STATUS_OK: "ok",
    STATUS_COLLINEAR: "collinear",
    STATUS_INDEFINITE_COVARIANCE: "indefinite_covariance",
    STATUS_NONFINITE: "nonfinite",
}

#: a pivot below rtol * S_jj marks the system as rank deficient
COLLINEARITY_RTOL = 1e-10


# -- numba path ---------------------------------------------------------------


@njit
def _spd_solve_nb(s, rhs, sol, invdiag, lo, colv, rtol):
    """Solve s @ sol = rhs from the lower triangle of ``s``.

    Returns -1 on success or the index of the failing pivot.
    """
    w = s.shape[0]
    for j in range(w):
        d = s[j, j]
        for p in range(j):
            d -= lo[j, p] * lo[j, p]
        if not (d > 0.0 and d > rtol * s[j, j]):
            return j
        ljj = np.sqrt(d)
        lo[j, j] = ljj
        for i in range(j + 1, w):
            acc = s[i, j]
            for p in range(j):
                acc -= lo[i, p] * lo[j, p]
            lo[i, j] = acc / ljj
    # forward then backward substitution
    for i in range(w):
        acc = rhs[i]
        for p in range(i):
            acc -= lo[i, p] * sol[p]
        sol[i] = acc / lo[i, i]
    for i in range(w - 1, -1, -1):
        acc = sol[i]
        for p in range(i + 1, w):
            acc -= lo[p, i] * sol[p]
        sol[i] = acc / lo[i, i]
    # diag(S^-1) = column sums of squares of L^-1
    for col in range(w):
        colv[col] = 1.0 / lo[col, col]
        for i in range(col + 1, w):
            acc = 0.0
            for p in range(col, i):
                acc -= lo[i, p] * colv[p]
            colv[i] = acc / lo[i, i]
        tot = 0.0
        for i in range(col, w):
            tot += colv[i] * colv[i]
        invdiag[col] = tot
    return -1


@njit
def _bordered_nb(s_tl, b_t, border, corner, rhs_last, sigma2, rtol, beta, se, status):
    k = border.shape[0]
    q = s_tl.shape[0]
    w = q + 1
    s = np.empty((w, w))
    lo = np.zeros((w, w))
    rhs = np.empty(w)
    sol = np.empty(w)
    invd = np.empty(w)
    colv = np.empty(w)
    for i in range(k):
        for a in range(q):
            for b in range(a + 1):
                s[a, b] = s_tl[a, b]
            s[q, a] = border[i, a]
            rhs[a] = b_t[a]
        s[q, q] = corner[i]
        rhs[q] = rhs_last[i]
        piv = _spd_solve_nb(s, rhs, sol, invd, lo, colv, rtol)
        if piv >= 0:
            status[i] = STATUS_COLLINEAR
            for a in range(w):
                beta[i, a] = 0.0
                se[i, a] = 0.0
            continue
        finite = True
        for a in range(w):
            beta[i, a] = sol[a]
            se[i, a] = np.sqrt(sigma2 * invd[a])
            if not (np.isfinite(sol[a]) and np.isfinite(se[i, a]) and se[i, a] > 0.0):
                finite = False
        if finite:
            status[i] = STATUS_OK
        else:
            status[i] = STATUS_NONFINITE
            for a in range(w):
                beta[i, a] = 0.0
                se[i, a] = 0.0


# -- numpy path -----------------------------------------------------------------


def _spd_batch_np(s, rhs, rtol):
    """Batched textbook Cholesky solve; ``s`` is (k, w, w), lower triangle read.

    Returns (sol, invdiag, failed_pivot) with failed_pivot = -1 where fine.
    """
    k, w, _ = s.shape
    lo = np.zeros_like(s)
    failed = np.full(k, -1, dtype=np.int64)
    for j in range(w):
        d = s[:, j, j] - np.einsum("kp,kp->k", lo[:, j, :j], lo[:, j, :j])
        bad = ~((d > 0.0) & (d > rtol * s[:, j, j])) & (failed < 0)
        failed[bad] = j
        d = np.where(failed >= 0, 1.0, d)
        ljj = np.sqrt(d)
        lo[:, j, j] = ljj
        if j + 1 < w:
            acc = s[:, j + 1 :, j] - np.einsum("kip,kp->ki", lo[:, j + 1 :, :j], lo[:, j, :j])
            lo[:, j + 1 :, j] = acc / ljj[:, None]
    sol = np.empty((k, w))
    for i in range(w):
        acc = rhs[:, i] - np.einsum("kp,kp->k", lo[:, i, :i], sol[:, :i])
        sol[:, i] = acc / lo[:, i, i]
    for i in range(w - 1, -1, -1):
        acc = sol[:, i] - np.einsum("kp,kp->k", lo[:, i + 1 :, i], sol[:, i + 1 :])
        sol[:, i] = acc / lo[:, i, i]
    invdiag = np.empty((k, w))
    for col in range(w):
        colv = np.zeros((k, w))
        colv[:, col] = 1.0 / lo[:, col, col]
        for i in range(col + 1, w):
            acc = -np.einsum("kp,kp->k", lo[:, i, col:i], colv[:, col:i])
            colv[:, i] = acc / lo[:, i, i]
        invdiag[:, col] = np.einsum("ki,ki->k", colv[:, col:], colv[:, col:])
    return sol, invdiag, failed


def _bordered_np(s_tl, b_t, border, corner, rhs_last, sigma2, rtol, beta, se, status):
    k = border.shape[0]
    q = s_tl.shape[0]
    w = q + 1
    s = np.zeros((k, w, w))
    s[:, :q, :q] = np.tril(s_tl)
    s[:, q, :q] = border
    s[:, q, q] = corner
    rhs = np.empty((k, w))
    rhs[:, :q] = b_t
    rhs[:, q] = rhs_last
    with np.errstate(all="ignore"):
        sol, invd, failed = _spd_batch_np(s, rhs, rtol)
        stderr = np.sqrt(sigma2 * invd)
    ok = np.all(np.isfinite(sol), axis=1) & np.all(np.isfinite(stderr) & (stderr > 0), axis=1)
    status[:] = np.where(failed >= 0, STATUS_COLLINEAR, np.where(ok, STATUS_OK, STATUS_NONFINITE))
    good = status == STATUS_OK
    beta[:] = np.where(good[:, None], sol, 0.0)
    se[:] = np.where(good[:, None], stderr, 0.0)


def _spd_solve_np(s, rhs, rtol):
    sol, invd, failed = _spd_batch_np(s[None], rhs[None], rtol)
    return sol[0], invd[0], int(failed[0])


def _spd_solve_nb_wrapper(s, rhs, rtol):
    w = s.shape[0]
    sol = np.empty(w)
    invd = np.empty(w)
    lo = np.zeros((w, w))
    colv = np.empty(w)
    piv = _spd_solve_nb(
        np.array(s, dtype=np.float64), np.ascontiguousarray(rhs, dtype=np.float64), sol, invd, lo, colv, rtol
    )
    return sol, invd, int(piv)


IMPLS = {
    "numba": {"bordered": _bordered_nb, "spd_solve": _spd_solve_nb_wrapper},
    "numpy": {"bordered": _bordered_np, "spd_solve": _spd_solve_np},
}

_bordered_impl = pick(_bordered_nb, _bordered_np)
spd_solve_textbook = pick(_spd_solve_nb_wrapper, _spd_solve_np)


def solve_bordered(s_tl, b_t, border, corner, rhs_last, sigma2, rtol=COLLINEARITY_RTOL, impl=None):
    """Solve the ``k`` bordered systems of one block.

    Parameters
    ----------
    s_tl : (q, q) cached top-left block (lower triangle read)
    b_t : (q,) cached top of the right-hand side
    border : (k, q) per-SNP border rows
    corner, rhs_last : (k,) per-SNP corner entries and last rhs entries
    sigma2 : trait variance scaling the standard errors

    Returns
    -------
    beta, stderr : (k, q + 1) arrays, zero rows where status != 0
    status : (k,) uint32 status codes
    """
    k = border.shape[0]
    w = s_tl.shape[0] + 1
    beta = np.empty((k, w))
    se = np.empty((k, w))
    status = np.empty(k, dtype=np.uint32)
    fn = _bordered_impl if impl is None else IMPLS[impl]["bordered"]
    fn(
        np.ascontiguousarray(s_tl, dtype=np.float64),
        np.ascontiguousarray(b_t, dtype=np.float64),
        np.ascontiguousarray(border, dtype=np.float64),
        np.ascontiguousarray(corner, dtype=np.float64),
        np.ascontiguousarray(rhs_last, dtype=np.float64),
        float(sigma2),
        float(rtol),
        beta,
        se,
        status,
    )
    return beta, se, status
