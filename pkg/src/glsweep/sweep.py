"""Machinery shared by the sweep engines: phase timing, error policy,
summaries and the optional block-parallel schedule."""

from __future__ import annotations

import contextlib
import logging
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import CollinearityError, ConfigError, ProblemError
from .kernels import STATUS_NAMES, STATUS_OK
from .results import ResultCollector
from .streamio import IOStats, overlap_report

log = logging.getLogger("glsweep")

FAIL_FAST = "fail_fast"
SKIP_AND_LOG = "skip_and_log"
ERROR_POLICIES = (FAIL_FAST, SKIP_AND_LOG)
MAX_LOGGED_FAILURES = 1000


def check_policy(policy):
    if policy not in ERROR_POLICIES:
        raise ConfigError(f"unknown error policy {policy!r}; expected one of {ERROR_POLICIES}")
    return policy


class PhaseTimer:
    """Accumulates busy seconds per named phase; safe across threads."""

    def __init__(self):
        self.seconds: dict[str, float] = {}
        self._lock = threading.Lock()

    def add(self, name, dt):
        with self._lock:
            self.seconds[name] = self.seconds.get(name, 0.0) + dt

    @contextlib.contextmanager
    def phase(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.add(name, time.perf_counter() - t0)


@dataclass
class SweepSummary:
    engine: str
    count: int = 0
    failures: int = 0
    failed: list = field(default_factory=list)
    phases: dict = field(default_factory=dict)
    io: IOStats = field(default_factory=IOStats)
    wall_seconds: float = 0.0
    kernel_calls: Counter = field(default_factory=Counter)
    counters: Counter = field(default_factory=Counter)
    sink: object = None

    @property
    def compute_seconds(self) -> float:
        return sum(self.phases.values())

    def overlap(self) -> dict:
        return overlap_report(self.compute_seconds, self.io, self.wall_seconds)

    def record_block(self, block, lock=None):
        bad = np.flatnonzero(block.status != STATUS_OK)
        ctx = lock if lock is not None else contextlib.nullcontext()
        with ctx:
            self.count += block.k
            self.failures += bad.size
            for i in bad:
                if len(self.failed) < MAX_LOGGED_FAILURES:
                    self.failed.append((block.first_snp + int(i), block.trait_index, int(block.status[i])))

    def merge(self, other: SweepSummary):
        self.count += other.count
        self.failures += other.failures
        self.failed.extend(other.failed[: max(0, MAX_LOGGED_FAILURES - len(self.failed))])
        for k, v in other.phases.items():
            self.phases[k] = self.phases.get(k, 0.0) + v
        self.io.read_seconds += other.io.read_seconds
        self.io.write_seconds += other.io.write_seconds
        self.wall_seconds += other.wall_seconds
        self.kernel_calls.update(other.kernel_calls)
        self.counters.update(other.counters)

    def as_kv(self) -> dict:
        out = {"engine": self.engine, "results": self.count, "failures": self.failures}
        for k in sorted(self.phases):
            out[f"{k}_seconds"] = round(self.phases[k], 6)
        ov = self.overlap()
        out["read_seconds"] = round(ov["read_seconds"], 6)
        out["write_seconds"] = round(ov["write_seconds"], 6)
        out["wall_seconds"] = round(self.wall_seconds, 6)
        eff = ov["overlap_efficiency"]
        out["overlap_efficiency"] = "nan" if not np.isfinite(eff) else round(eff, 4)
        return out


def apply_policy(block, policy):
    """Raise for the first failed SNP under fail_fast, otherwise log them."""
    bad = np.flatnonzero(block.status != STATUS_OK)
    if not bad.size:
        return
    if policy == FAIL_FAST:
        i = int(bad[0])
        raise ProblemError(
            block.first_snp + i,
            block.trait_index,
            CollinearityError(f"normal equations {STATUS_NAMES.get(int(block.status[i]), 'failed')}"),
        )
    for i in bad[:20]:
        log.warning(
            "snp %d trait %d skipped: %s",
            block.first_snp + int(i),
            block.trait_index,
            STATUS_NAMES.get(int(block.status[i]), "failed"),
        )


def default_sink(sink, m, w, traits):
    return sink if sink is not None else ResultCollector(m, w, traits)


@contextlib.contextmanager
def serial_kernels(active: bool):
    """Limit BLAS to one thread while block-level workers run."""
    if not active:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


def run_blocks(blocks, work, workers=1):
    """Apply ``work(block)`` to every streamed block.

    With ``workers > 1`` each block is copied out of the stream buffer and
    handed to a thread pool; at most ``2 * workers`` blocks are in flight.
    """
    if workers <= 1:
        for blk in blocks:
            work(blk)
        return
    from .model import GenotypeBlock

    with ThreadPoolExecutor(max_workers=workers) as pool, serial_kernels(True):
        pending = []
        for blk in blocks:
            own = GenotypeBlock(np.array(blk.xr, order="F"), blk.first_snp_index)
            pending.append(pool.submit(work, own))
            if len(pending) >= 2 * workers:
                pending.pop(0).result()
        for fut in pending:
            fut.result()
