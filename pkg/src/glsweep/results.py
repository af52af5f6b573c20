"""Per-block result containers and in-memory sinks."""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .kernels import STATUS_OK
from .model import GlsResult


@dataclass
class ResultBlock:
    """Results of ``k`` consecutive SNPs for one trait."""

    trait_index: int
    first_snp: int
    beta: np.ndarray
    stderr: np.ndarray
    status: np.ndarray

    @property
    def k(self) -> int:
        return self.beta.shape[0]

    def records(self):
        for i in range(self.k):
            yield GlsResult(
                snp_index=self.first_snp + i,
                trait_index=self.trait_index,
                beta=self.beta[i].copy(),
                stderr=self.stderr[i].copy(),
                status=int(self.status[i]),
            )

    @classmethod
    def from_result(cls, r: GlsResult) -> ResultBlock:
        return cls(
            trait_index=r.trait_index,
            first_snp=r.snp_index,
            beta=np.asarray(r.beta, dtype=np.float64)[None, :],
            stderr=np.asarray(r.stderr, dtype=np.float64)[None, :],
            status=np.array([r.status], dtype=np.uint32),
        )


class ResultCollector:
    """Sink that keeps every result in dense (t, m, w) arrays."""

    def __init__(self, m, w, traits):
        self.m, self.w = int(m), int(w)
        self.traits = [int(j) for j in traits]
        self._pos = {j: i for i, j in enumerate(self.traits)}
        t = len(self.traits)
        self.beta = np.full((t, self.m, self.w), np.nan)
        self.stderr = np.full((t, self.m, self.w), np.nan)
        self.status = np.full((t, self.m), np.iinfo(np.uint32).max, dtype=np.uint32)
        self.records_written = 0
        self._lock = threading.Lock()

    def write_block(self, block: ResultBlock) -> None:
        p = self._pos[block.trait_index]
        sl = slice(block.first_snp, block.first_snp + block.k)
        self.beta[p, sl] = block.beta
        self.stderr[p, sl] = block.stderr
        self.status[p, sl] = block.status
        with self._lock:
            self.records_written += block.k

    def close(self, abort=False):
        return self.records_written

    def trait(self, j):
        """(beta, stderr, status) for trait index ``j``."""
        p = self._pos[j]
        return self.beta[p], self.stderr[p], self.status[p]

    def results(self):
        """Every result as :class:`GlsResult`, trait-major then SNP order."""
        for p, j in enumerate(self.traits):
            for i in range(self.m):
                yield GlsResult(i, j, self.beta[p, i].copy(), self.stderr[p, i].copy(), int(self.status[p, i]))

    @property
    def ok(self) -> np.ndarray:
        return self.status == STATUS_OK


@dataclass
class Comparison:
    """Outcome of comparing two result grids."""

    max_rel_beta: float
    max_rel_stderr: float
    compared: int
    status_mismatches: int
    mismatch_examples: list

    @property
    def max_rel(self) -> float:
        return max(self.max_rel_beta, self.max_rel_stderr)


def _colwise_rel(a, b, mask):
    # per coefficient: max |a - b| / max |b| over the compared records
    if not mask.any():
        return 0.0
    a, b = a[mask], b[mask]
    num = np.abs(a - b).max(axis=0)
    den = np.abs(b).max(axis=0)
    rel = np.where(den > 0, num / np.where(den > 0, den, 1.0), num)
    return float(rel.max())


def compare_grids(a, b, max_examples=10) -> Comparison:
    """Compare ``(beta, stderr, status)`` triples shaped (t, m, w), (t, m, w), (t, m).

    Differences are relative to the largest magnitude of each coefficient in
    ``b`` and only cover records with status 0 in both.
    """
    beta_a, se_a, st_a = a
    beta_b, se_b, st_b = b
    if np.shape(beta_a) != np.shape(beta_b):
        raise ValueError(f"shape mismatch {np.shape(beta_a)} vs {np.shape(beta_b)}")
    both = (st_a == STATUS_OK) & (st_b == STATUS_OK)
    diff = np.argwhere(st_a != st_b)
    return Comparison(
        max_rel_beta=_colwise_rel(beta_a, beta_b, both),
        max_rel_stderr=_colwise_rel(se_a, se_b, both),
        compared=int(both.sum()),
        status_mismatches=int(diff.shape[0]),
        mismatch_examples=[(int(j), int(i), int(st_a[j, i]), int(st_b[j, i])) for j, i in diff[:max_examples]],
    )
