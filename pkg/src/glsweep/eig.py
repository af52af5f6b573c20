"""Eigendecomposition route for many traits sharing one kinship matrix.

``Phi = Z W Z'`` is computed once and every genotype is rotated by ``Z'``
once. Each trait then only rescales rows by ``sqrt(D)``, with
``D = (sigma2 (h2 W + (1 - h2) I))^-1``, so the per-(SNP, trait) work is
O(n w).
"""

from __future__ import annotations

import os
import shutil
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, IndefiniteError, StreamIOError, StructuralError
from .kernels import CountingBackend, EigenPair, get_backend, solve_bordered
from .chol import _failed_trait, loop_ops
from .model import Dataset, GlsResult, TraitParams, assemble_spectral_weights
from .results import ResultBlock
from .streamio import (
    DEFAULT_BLOCK_SIZE,
    HEADER_BYTES,
    ArraySource,
    IOStats,
    MatrixFile,
    MatrixWriter,
    as_source,
    make_plan,
    scratch_dir,
    stream_blocks,
)
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
class EigContext:
    """Rotated data shared by all traits.

    ``rotated`` is a block source over ``Z' X_R``: a scratch matrix file, or
    an in-memory array with ``in_memory_rotation``.
    """

    eig: EigenPair
    xl_rot: np.ndarray
    y_rot: np.ndarray
    rotated: object = None
    scratch_path: Path | None = None
    counters: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.eig.w.shape[0]

    def close(self):
        if isinstance(self.rotated, MatrixFile):
            self.rotated.close()
        if self.scratch_path is not None:
            try:
                os.unlink(self.scratch_path)
            except FileNotFoundError:
                pass
            self.scratch_path = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class TraitContext:
    k_diag: np.ndarray
    yj_scaled: np.ndarray
    wl: np.ndarray
    s_tl: np.ndarray
    b_t: np.ndarray
    params: TraitParams
    trait_index: int = 0


def solve_single_eig(phi, params: TraitParams, x, y, backend=None, clamp=False) -> GlsResult:
    """One GLS problem through the spectral decomposition of ``phi``."""
    be = get_backend(backend)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    eig = be.sym_eig(phi)
    d = assemble_spectral_weights(eig.w, params, clamp=clamp)
    k = np.sqrt(d)
    v_t = k[:, None] * be.gemm_t(eig.z, x)  # V' = K Z' X
    s = be.cross_product(v_t)
    b = be.gemm_t(v_t, k * be.gemm_t(eig.z, np.asarray(y, dtype=np.float64)))
    beta, invdiag = be.small_spd_solve(s, b)
    return GlsResult(-1, -1, beta, np.sqrt(params.sigma2 * invdiag))


def _decompose(phi, be, overwrite_kinship):
    if not overwrite_kinship:
        return be.sym_eig(phi)
    # reuse the kinship buffer for Z; the dataset's kinship is destroyed
    buf = phi.view()
    buf.flags.writeable = True
    target = buf.T if buf.flags.c_contiguous else buf
    eig = be.sym_eig(target, overwrite=True)
    target[...] = eig.z
    return EigenPair(eig.w, target)


def precompute_eig(
    phi,
    xl,
    phenotypes,
    genotype_source,
    *,
    backend=None,
    block_size: int = DEFAULT_BLOCK_SIZE,
    scratch: str | os.PathLike | None = None,
    in_memory_rotation: bool = False,
    rotation_budget: int | None = None,
    overwrite_kinship: bool = False,
    prefetch: bool = True,
    stats: IOStats | None = None,
    timer: PhaseTimer | None = None,
) -> EigContext:
    """Decompose ``phi`` and rotate X_L, Y and every genotype block by ``Z'``.

    Rotated genotypes go to a scratch matrix file (same layout as the input)
    unless ``in_memory_rotation`` is set and ``n * m * 8`` fits
    ``rotation_budget`` bytes.
    """
    be = get_backend(backend)
    timer = timer if timer is not None else PhaseTimer()
    stats = stats if stats is not None else IOStats()
    source = as_source(genotype_source)
    n = source.n_rows
    m = source.n_cols
    if np.shape(phi) != (n, n):
        raise StructuralError(f"kinship is {np.shape(phi)}, genotypes have {n} rows")

    with timer.phase("eig"):
        eig = _decompose(phi, be, overwrite_kinship)
    with timer.phase("rotate"):
        xl_rot = be.gemm_t(eig.z, np.asarray(xl, dtype=np.float64))
        y = np.asarray(phenotypes, dtype=np.float64)
        y_rot = be.gemm_t(eig.z, y[:, None] if y.ndim == 1 else y)

    need = n * m * 8
    if in_memory_rotation:
        if rotation_budget is not None and need > rotation_budget:
            log.warning("rotated genotypes need %d bytes > budget %d; using a scratch file", need, rotation_budget)
            in_memory_rotation = False

    path = None
    if in_memory_rotation:
        rotated = np.empty((n, m), order="F")

        def put(start, rot):
            rotated[:, start : start + rot.shape[1]] = rot

        writer = None
    else:
        folder = scratch_dir(scratch)
        folder.mkdir(parents=True, exist_ok=True)
        free = shutil.disk_usage(folder).free
        if free < need + HEADER_BYTES:
            raise StreamIOError(
                f"scratch space exhausted in {folder}: need {need + HEADER_BYTES} bytes, {free} available"
            )
        path = folder / f"glsweep-rotated-{os.getpid()}-{uuid.uuid4().hex[:8]}.gmat"
        writer = MatrixWriter(path, n, m, background=prefetch, stats=stats)

        def put(start, rot):
            writer.write_columns(rot)

    plan = make_plan(source, block_size)
    rotations = 0
    try:
        for blk in stream_blocks(source, plan, prefetch=prefetch, stats=stats):
            with timer.phase("rotate"):
                rot = be.gemm_t(eig.z, blk.xr)
            rotations += 1
            put(blk.first_snp_index, rot)
            del rot
        if writer is not None:
            writer.close()
    except BaseException:
        if writer is not None:
            try:
                writer.close()
            except Exception:
                pass
            os.unlink(path)
        raise

    ctx = EigContext(eig=eig, xl_rot=xl_rot, y_rot=y_rot, scratch_path=path)
    ctx.rotated = ArraySource(rotated) if in_memory_rotation else MatrixFile(path)
    ctx.counters["genotype_rotation_passes"] = 1
    ctx.counters["genotype_rotation_blocks"] = rotations
    return ctx


def setup_trait(ctx: EigContext, params: TraitParams, trait_index: int, backend=None, clamp=False) -> TraitContext:
    """Per-trait diagonal reweighting; O(n c^2), nothing quadratic in n."""
    be = get_backend(backend)
    d = assemble_spectral_weights(ctx.eig.w, params, clamp=clamp)
    k = np.sqrt(d)
    yj = k * ctx.y_rot[:, trait_index]
    wl = np.asfortranarray(k[:, None] * ctx.xl_rot)
    s_tl = be.cross_product(wl)
    b_t = be.gemm_t(wl, yj)
    return TraitContext(k_diag=k, yj_scaled=yj, wl=wl, s_tl=s_tl, b_t=b_t, params=params, trait_index=trait_index)


def process_block_eig(tctx: TraitContext, rotated, first_snp=0, backend=None) -> ResultBlock:
    """Scale a rotated block by ``sqrt(D)`` and solve each SNP's bordered system."""
    be = get_backend(backend)
    wr = tctx.k_diag[:, None] * rotated
    border = be.gemm_t(wr, tctx.wl)
    corner = np.einsum("ij,ij->j", wr, wr)
    rhs_last = be.gemm_t(wr, tctx.yj_scaled)
    beta, se, status = solve_bordered(tctx.s_tl, tctx.b_t, border, corner, rhs_last, tctx.params.sigma2)
    return ResultBlock(tctx.trait_index, first_snp, beta, se, status)


def sweep_eig(
    dataset: Dataset,
    block_source,
    block_sink=None,
    *,
    traits=None,
    block_size: int = DEFAULT_BLOCK_SIZE,
    backend=None,
    workers: int = 1,
    error_policy: str = SKIP_AND_LOG,
    scratch: str | os.PathLike | None = None,
    in_memory_rotation: bool = False,
    rotation_budget: int | None = None,
    overwrite_kinship: bool = False,
    clamp: bool = False,
    prefetch: bool = True,
) -> SweepSummary:
    """Solve the full (SNP x trait) grid.

    Phase timings: ``eig``, ``rotate``, ``setup``, ``loop``. The genotypes are
    rotated exactly once whatever the number of traits.
    """
    check_policy(error_policy)
    t_start = time.perf_counter()
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    source = as_source(block_source)
    dims = dataset.dims
    if source.n_cols != dims.m or source.n_rows != dims.n:
        raise StructuralError(f"genotypes are {source.n_rows} x {source.n_cols}, dataset expects {dims.n} x {dims.m}")
    traits = list(range(dims.t)) if traits is None else [int(j) for j in traits]
    be = CountingBackend(backend)
    sink = default_sink(block_sink, dims.m, dims.w, traits)
    summary = SweepSummary("eig", io=getattr(sink, "stats", None) or IOStats(), sink=sink)
    timer = PhaseTimer()
    lock = threading.Lock()
    try:
        ctx = precompute_eig(
            dataset.phi,
            dataset.xl,
            dataset.y,
            source,
            backend=be,
            block_size=block_size,
            scratch=scratch,
            in_memory_rotation=in_memory_rotation,
            rotation_budget=rotation_budget,
            overwrite_kinship=overwrite_kinship,
            prefetch=prefetch,
            stats=summary.io,
            timer=timer,
        )
        with ctx:
            summary.counters.update(ctx.counters)
            plan = make_plan(ctx.rotated, block_size)
            for j in traits:
                try:
                    with timer.phase("setup"):
                        tctx = setup_trait(ctx, dataset.params[j], j, backend=be, clamp=clamp)
                except IndefiniteError:
                    if error_policy == FAIL_FAST:
                        raise
                    log.error("trait %d: spectral weights not positive, all SNPs marked failed", j)
                    _failed_trait(sink, summary, j, dims.m, dims.w, plan.block_size)
                    continue

                def work(blk, tctx=tctx):
                    t0 = time.perf_counter()
                    res = process_block_eig(tctx, blk.xr, blk.first_snp_index, backend=be)
                    timer.add("loop", time.perf_counter() - t0)
                    summary.record_block(res, lock)
                    with lock:
                        summary.counters["loop_ops"] += loop_ops(dims.n, dims.q, blk.k, eig=True)
                    apply_policy(res, error_policy)
                    sink.write_block(res)

                run_blocks(stream_blocks(ctx.rotated, plan, prefetch=prefetch, stats=summary.io), work, workers)
    except BaseException:
        sink.close(abort=True)
        raise
    sink.close()
    summary.phases = dict(timer.seconds)
    summary.kernel_calls = be.counts
    summary.wall_seconds = time.perf_counter() - t_start
    return summary
