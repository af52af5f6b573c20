"""Cholesky-whitened GLS: one factorization per trait, then a bordered
w x w system per SNP.

Cost per trait: n^3/3 for the factor, m n^2 for whitening the genotypes,
O(m n w) for the per-SNP loop.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass

import numpy as np

from .errors import IndefiniteError, StructuralError
from .kernels import STATUS_INDEFINITE_COVARIANCE, CountingBackend, get_backend, solve_bordered
from .model import Dataset, GenotypeBlock, GlsResult, TraitParams, assemble_covariance
from .results import ResultBlock
from .streamio import DEFAULT_BLOCK_SIZE, IOStats, as_source, make_plan, stream_blocks
from .sweep import (
    FAIL_FAST,
    SKIP_AND_LOG,
    PhaseTimer,
    SweepSummary,
    apply_policy,
    check_policy,
    default_sink,
    log,
    run_blocks,
)


@dataclass
class CholContext:
    """Everything a trait's SNP loop needs, whitened by ``L^-1``."""

    l: np.ndarray
    xl_white: np.ndarray
    y_white: np.ndarray
    s_tl: np.ndarray
    b_t: np.ndarray
    params: TraitParams
    trait_index: int = 0

    @property
    def n(self):
        return self.l.shape[0]


def solve_single_chol(phi, params: TraitParams, x, y, backend=None) -> GlsResult:
    """One GLS problem reduced to ordinary least squares by Cholesky whitening."""
    be = get_backend(backend)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    m_mat = assemble_covariance(phi, params)
    lo = be.chol_factor(m_mat, overwrite=True)
    xw = be.tri_solve_left(lo, np.array(x, order="F"), overwrite=True)
    yw = be.tri_solve_left(lo, np.array(y, dtype=np.float64), overwrite=True)
    s = be.cross_product(xw)
    b = be.gemm_t(xw, yw)
    beta, invdiag = be.small_spd_solve(s, b)
    return GlsResult(-1, -1, beta, np.sqrt(params.sigma2 * invdiag))


def precompute_chol(phi, params: TraitParams, xl, y, backend=None, trait_index=0) -> CholContext:
    """Factor the trait covariance and whiten the fixed block and phenotype.

    Raises :class:`IndefiniteError` annotated with the trait index.
    """
    be = get_backend(backend)
    m_mat = assemble_covariance(phi, params, mirror=False)
    try:
        lo = be.chol_factor(m_mat, overwrite=True)
    except IndefiniteError as exc:
        raise IndefiniteError(f"trait {trait_index}: covariance factorization failed: {exc}", exc.pivot) from exc
    del m_mat
    xlw = be.tri_solve_left(lo, np.array(xl, dtype=np.float64, order="F"), overwrite=True)
    yw = be.tri_solve_left(lo, np.array(y, dtype=np.float64), overwrite=True)
    s_tl = be.cross_product(xlw)
    b_t = be.gemm_t(xlw, yw)
    return CholContext(l=lo, xl_white=xlw, y_white=yw, s_tl=s_tl, b_t=b_t, params=params, trait_index=trait_index)


def whiten_block(ctx: CholContext, block, backend=None, overwrite=True) -> np.ndarray:
    """``L^-1 X_R`` for the whole block in one triangular solve."""
    be = get_backend(backend)
    xr = block.xr if isinstance(block, GenotypeBlock) else block
    if xr.shape[0] != ctx.n:
        raise StructuralError(f"block has {xr.shape[0]} rows, expected {ctx.n}")
    return be.tri_solve_left(ctx.l, xr, overwrite=overwrite)


def loop_ops(n, q, k, eig=False) -> int:
    """Flop count of the per-SNP loop for one block: border, corner, rhs,
    optional diagonal scaling, and the small factor/solve."""
    w = q + 1
    per_snp = 2 * n * q + 2 * n + 2 * n + (n if eig else 0) + (w**3) // 3 + 3 * w * w
    return k * per_snp


def process_block_chol(ctx: CholContext, whitened, first_snp=0, backend=None) -> ResultBlock:
    """Solve the bordered systems of every SNP in a whitened block."""
    be = get_backend(backend)
    border = be.gemm_t(whitened, ctx.xl_white)
    corner = np.einsum("ij,ij->j", whitened, whitened)
    rhs_last = be.gemm_t(whitened, ctx.y_white)
    beta, se, status = solve_bordered(ctx.s_tl, ctx.b_t, border, corner, rhs_last, ctx.params.sigma2)
    return ResultBlock(ctx.trait_index, first_snp, beta, se, status)


def _failed_trait(sink, summary, j, m, w, block_size):
    for start in range(0, m, block_size):
        k = min(block_size, m - start)
        blk = ResultBlock(
            j, start, np.zeros((k, w)), np.zeros((k, w)), np.full(k, STATUS_INDEFINITE_COVARIANCE, dtype=np.uint32)
        )
        summary.record_block(blk)
        sink.write_block(blk)


def sweep_chol(
    dataset: Dataset,
    trait_index,
    block_source,
    block_sink=None,
    *,
    block_size: int = DEFAULT_BLOCK_SIZE,
    backend=None,
    workers: int = 1,
    error_policy: str = SKIP_AND_LOG,
    prefetch: bool = True,
) -> SweepSummary:
    """Sweep all SNPs for one trait (or a list of traits, one after another).

    Phase timings: ``precompute``, ``whiten``, ``loop``; I/O busy time is in
    ``summary.io``.
    """
    check_policy(error_policy)
    t_start = time.perf_counter()
    traits = [int(trait_index)] if np.isscalar(trait_index) else [int(j) for j in trait_index]
    source = as_source(block_source)
    dims = dataset.dims
    if source.n_cols != dims.m or source.n_rows != dims.n:
        raise StructuralError(f"genotypes are {source.n_rows} x {source.n_cols}, dataset expects {dims.n} x {dims.m}")
    be = CountingBackend(backend)
    sink = default_sink(block_sink, dims.m, dims.w, traits)
    summary = SweepSummary("chol", io=getattr(sink, "stats", None) or IOStats(), sink=sink)
    timer = PhaseTimer()
    plan = make_plan(source, block_size)
    lock = threading.Lock()
    try:
        for j in traits:
            y, params = dataset.trait(j)
            try:
                with timer.phase("precompute"):
                    ctx = precompute_chol(dataset.phi, params, dataset.xl, y, backend=be, trait_index=j)
            except IndefiniteError:
                if error_policy == FAIL_FAST:
                    raise
                log.error("trait %d: covariance not positive definite, all SNPs marked failed", j)
                _failed_trait(sink, summary, j, dims.m, dims.w, plan.block_size)
                continue

            def work(blk, ctx=ctx):
                t0 = time.perf_counter()
                g = whiten_block(ctx, blk, backend=be, overwrite=True)
                t1 = time.perf_counter()
                res = process_block_chol(ctx, g, blk.first_snp_index, backend=be)
                t2 = time.perf_counter()
                timer.add("whiten", t1 - t0)
                timer.add("loop", t2 - t1)
                summary.record_block(res, lock)
                with lock:
                    summary.counters["loop_ops"] += loop_ops(dims.n, dims.q, blk.k)
                apply_policy(res, error_policy)
                sink.write_block(res)

            run_blocks(stream_blocks(source, plan, prefetch=prefetch, stats=summary.io), work, workers)
            del ctx
    except BaseException:
        sink.close(abort=True)
        raise
    sink.close()
    summary.phases = dict(timer.seconds)
    summary.kernel_calls = be.counts
    summary.wall_seconds = time.perf_counter() - t_start
    return summary
