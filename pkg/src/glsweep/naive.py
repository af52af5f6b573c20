"""Brute-force GLS oracle.

Every problem assembles its own covariance, factors it and whitens its own
design, with no reuse across problems. Cost O(m n^3) per trait.
"""

from __future__ import annotations

import time

import numpy as np

from .errors import CollinearityError, IndefiniteError, ProblemError, StructuralError
from .kernels import STATUS_COLLINEAR, STATUS_INDEFINITE_COVARIANCE, CountingBackend, get_backend
from .model import Dataset, GlsResult, TraitParams, assemble_covariance
from .results import ResultBlock
from .streamio import DEFAULT_BLOCK_SIZE, IOStats, as_source, make_plan, stream_blocks
from .sweep import FAIL_FAST, SweepSummary, check_policy, default_sink, log


def solve_gls_naive(phi, params: TraitParams, x, y, backend=None, work=None) -> GlsResult:
    """Solve one GLS problem ``b = (X' M^-1 X)^-1 X' M^-1 y``.

    ``stderr_i = sqrt(sigma2 * [(X' M^-1 X)^-1]_ii)``. ``work`` is an optional
    (n, n) scratch buffer; it is overwritten.
    """
    be = get_backend(backend)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=np.float64)
    n, w = x.shape
    if y.shape != (n,) or np.shape(phi) != (n, n):
        raise StructuralError(f"shapes do not agree: phi {np.shape(phi)}, x {x.shape}, y {y.shape}")
    m_mat = assemble_covariance(phi, params, out=work, mirror=False)
    lo = be.chol_factor(m_mat, overwrite=True)
    xy = np.empty((n, w + 1), order="F")
    xy[:, :w] = x
    xy[:, w] = y
    xy = be.tri_solve_left(lo, xy, overwrite=True)
    xw = xy[:, :w]
    s = be.cross_product(xw)
    rhs = be.gemm_t(xw, xy[:, w])
    beta, invdiag = be.small_spd_solve(s, rhs)
    return GlsResult(-1, -1, beta, np.sqrt(params.sigma2 * invdiag))


def _naive_block(dataset: Dataset, j, block, be, policy, work):
    y, params = dataset.trait(j)
    n, q = dataset.xl.shape
    w = q + 1
    k = block.k
    beta = np.zeros((k, w))
    se = np.zeros((k, w))
    status = np.zeros(k, dtype=np.uint32)
    x = np.empty((n, w), order="F")
    x[:, :q] = dataset.xl
    for c in range(k):
        i = block.first_snp_index + c
        x[:, q] = block.xr[:, c]
        try:
            r = solve_gls_naive(dataset.phi, params, x, y, backend=be, work=work)
        except (CollinearityError, IndefiniteError) as exc:
            if policy == FAIL_FAST:
                raise ProblemError(i, j, exc) from exc
            code = STATUS_COLLINEAR if isinstance(exc, CollinearityError) else STATUS_INDEFINITE_COVARIANCE
            status[c] = code
            log.warning("snp %d trait %d skipped: %s", i, j, exc)
            continue
        beta[c] = r.beta
        se[c] = r.stderr
    return ResultBlock(j, block.first_snp_index, beta, se, status)


def sweep_naive(
    dataset: Dataset,
    block_source,
    block_sink=None,
    *,
    traits=None,
    block_size: int = DEFAULT_BLOCK_SIZE,
    backend=None,
    error_policy: str = FAIL_FAST,
    prefetch: bool = True,
) -> SweepSummary:
    """Solve all m * t problems one at a time (trait outer, SNP inner)."""
    check_policy(error_policy)
    t_start = time.perf_counter()
    source = as_source(block_source)
    dims = dataset.dims
    if source.n_cols != dims.m or source.n_rows != dims.n:
        raise StructuralError(f"genotypes are {source.n_rows} x {source.n_cols}, dataset expects {dims.n} x {dims.m}")
    traits = list(range(dims.t)) if traits is None else [int(j) for j in traits]
    be = CountingBackend(backend)
    sink = default_sink(block_sink, dims.m, dims.w, traits)
    summary = SweepSummary("naive", io=getattr(sink, "stats", None) or IOStats(), sink=sink)
    work = np.empty((dims.n, dims.n), order="F")
    plan = make_plan(source, block_size)
    solve_s = 0.0
    try:
        for j in traits:
            for blk in stream_blocks(source, plan, prefetch=prefetch, stats=summary.io):
                t0 = time.perf_counter()
                res = _naive_block(dataset, j, blk, be, error_policy, work)
                solve_s += time.perf_counter() - t0
                summary.record_block(res)
                sink.write_block(res)
    except BaseException:
        sink.close(abort=True)
        raise
    sink.close()
    summary.phases["solve"] = solve_s
    summary.kernel_calls = be.counts
    summary.wall_seconds = time.perf_counter() - t_start
    return summary


def iter_naive(dataset: Dataset, block_source, *, traits=None, block_size=DEFAULT_BLOCK_SIZE, backend=None,
               error_policy=FAIL_FAST):
    """Yield :class:`GlsResult` for every (SNP, trait), trait-major."""
    check_policy(error_policy)
    source = as_source(block_source)
    traits = list(range(dataset.dims.t)) if traits is None else traits
    be = get_backend(backend)
    work = np.empty((dataset.dims.n, dataset.dims.n), order="F")
    plan = make_plan(source, block_size)
    for j in traits:
        for blk in stream_blocks(source, plan, prefetch=False):
            yield from _naive_block(dataset, j, blk, be, error_policy, work).records()
