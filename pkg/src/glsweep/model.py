"""Domain types and closed-form covariance assembly.

The variance-components model used throughout is

    y_j = X_i beta_ij + r,   r ~ N(0, M_j),   M_j = sigma2_j (h2_j Phi + (1 - h2_j) I)

where ``Phi`` is the kinship matrix shared by every trait, ``X_i`` is the
design ``[1 | covariates | g_i]`` for SNP ``i`` and ``(sigma2_j, h2_j)`` are
per-trait variance-component estimates supplied by the caller.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import IndefiniteError, StructuralError, ValidationError

#: smallest admissible value of sigma2 * (h2 * w_i + 1 - h2)
EPS_SPD = 1e-10

SYMMETRY_ATOL = 1e-12
KINSHIP_DIAG_RANGE = (0.9, 1.1)


@dataclass(frozen=True)
class Dimensions:
    """Problem sizes. ``w`` is derived: intercept + covariates + one genotype."""

    n: int
    m: int
    t: int
    c: int

    @property
    def w(self) -> int:
        return self.c + 2

    @property
    def q(self) -> int:
        """Width of the fixed block X_L (intercept + covariates)."""
        return self.c + 1

    def violations(self) -> list[Violation]:
        out = []
        if self.c < 0:
            out.append(Violation("dims.c", f"c={self.c} must be >= 0"))
        if self.m < 1:
            out.append(Violation("dims.m", f"m={self.m} must be >= 1"))
        if self.t < 1:
            out.append(Violation("dims.t", f"t={self.t} must be >= 1"))
        if self.n < self.w:
            out.append(Violation("dims.n", f"n={self.n} must be >= w={self.w}"))
        return out


@dataclass(frozen=True)
class TraitParams:
    sigma2: float
    h2: float

    def violations(self, trait_index=None) -> list[Violation]:
        out = []
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            out.append(Violation("params.sigma2", f"sigma2={self.sigma2} must be > 0", trait_index))
        if not (np.isfinite(self.h2) and 0.0 <= self.h2 <= 1.0):
            out.append(Violation("params.h2", f"h2={self.h2} must lie in [0, 1]", trait_index))
        return out

    def check(self):
        bad = self.violations()
        if bad:
            raise ValidationError(bad)
        return self


@dataclass(frozen=True)
class Violation:
    field: str
    message: str
    index: int | tuple | None = None

    def __str__(self):
        loc = "" if self.index is None else f"[{self.index}]"
        return f"{self.field}{loc}: {self.message}"


@dataclass
class GenotypeBlock:
    """``k`` consecutive SNP columns, ``xr`` has shape (n, k)."""

    xr: np.ndarray
    first_snp_index: int

    @property
    def k(self) -> int:
        return self.xr.shape[1]

    @property
    def snp_indices(self) -> np.ndarray:
        return np.arange(self.first_snp_index, self.first_snp_index + self.k)

    def dosage_violations(self) -> list[Violation]:
        bad = np.argwhere(~((self.xr >= 0.0) & (self.xr <= 2.0)))
        return [
            Violation("genotypes", "dosage outside [0, 2]", (int(r), int(c) + self.first_snp_index))
            for r, c in bad[:20]
        ]


@dataclass
class GlsResult:
    snp_index: int
    trait_index: int
    beta: np.ndarray
    stderr: np.ndarray
    status: int = 0

    @property
    def ok(self) -> bool:
        return self.status == 0


@dataclass(frozen=True)
class Dataset:
    """A validated, read-only bundle of everything but the genotypes.

    Build it with :func:`validate_dataset`. Genotypes are streamed separately
    from a block source whose column count must equal ``dims.m``.
    """

    dims: Dimensions
    phi: np.ndarray
    xl: np.ndarray
    y: np.ndarray
    params: tuple[TraitParams, ...] = field(default=())

    def trait(self, j: int) -> tuple[np.ndarray, TraitParams]:
        return self.y[:, j], self.params[j]


def assemble_covariance(
    phi: np.ndarray, params: TraitParams, out: np.ndarray | None = None, mirror: bool = True
) -> np.ndarray:
    """Return ``M = sigma2 * (h2 * phi + (1 - h2) * I)``.

    The upper triangle is overwritten with the mirror of the lower one, so the
    result is exactly symmetric. Factorizations only read the lower triangle
    and may pass ``mirror=False`` to skip that pass. ``out`` may alias ``phi``.
    """
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim != 2 or phi.shape[0] != phi.shape[1]:
        raise StructuralError(f"kinship must be square, got shape {phi.shape}")
    n = phi.shape[0]
    if out is None:
        out = np.empty((n, n), order="F")
    elif out.shape != (n, n):
        raise StructuralError(f"output buffer has shape {out.shape}, expected {(n, n)}")
    s, h = float(params.sigma2), float(params.h2)
    np.multiply(phi, s * h, out=out)
    out.flat[:: n + 1] += s * (1.0 - h)
    if mirror:
        iu = _upper_indices(n)
        out[iu] = out.T[iu]
    return out


@lru_cache(maxsize=8)
def _upper_indices(n):
    return np.triu_indices(n, 1)


def assemble_spectral_weights(eigvals, params: TraitParams, clamp: bool = False) -> np.ndarray:
    """Diagonal of ``(sigma2 * (h2 * W + (1 - h2) I))^-1`` for eigenvalues ``W``.

    Raises :class:`IndefiniteError` naming the first eigenvalue whose scaled
    variance falls at or below ``EPS_SPD``; ``clamp=True`` floors it instead.
    """
    w = np.asarray(eigvals, dtype=np.float64)
    var = params.sigma2 * (params.h2 * w + (1.0 - params.h2))
    bad = np.flatnonzero(~(var > EPS_SPD))
    if bad.size:
        if not clamp:
            i = int(bad[0])
            raise IndefiniteError(
                f"trait covariance is numerically singular: eigenvalue #{i} = {w[i]:.6g} "
                f"gives variance {var[i]:.3g} <= {EPS_SPD:g}",
                pivot=i,
            )
        var = np.maximum(var, EPS_SPD)
    return 1.0 / var


def _xl_rank_ok(xl: np.ndarray) -> bool:
    g = xl.T @ xl
    d = np.sqrt(np.diag(g))
    if np.any(d == 0):
        return False
    g = g / np.outer(d, d)
    try:
        lo = np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        return False
    return bool(np.min(np.diag(lo)) ** 2 > 1e-12)


def check_dataset(dims: Dimensions, phi, xl, y, params: Sequence[TraitParams]) -> list[Violation]:
    """Return every invariant violation; an empty list means the data is valid."""
    out = list(dims.violations())
    phi = np.asarray(phi)
    xl = np.asarray(xl)
    y = np.asarray(y)
    if y.ndim == 1:
        y = y[:, None]
    n = dims.n

    if phi.shape != (n, n):
        out.append(Violation("kinship", f"shape {phi.shape}, expected {(n, n)}"))
    else:
        asym = np.abs(phi - phi.T)
        if asym.max(initial=0.0) > SYMMETRY_ATOL:
            r, c = np.unravel_index(np.argmax(asym), asym.shape)
            out.append(Violation("kinship", f"not symmetric (|diff|={asym[r, c]:.3g})", (int(r), int(c))))
        diag = np.diag(phi)
        lo, hi = KINSHIP_DIAG_RANGE
        for i in np.flatnonzero(~((diag >= lo) & (diag <= hi)))[:20]:
            out.append(Violation("kinship.diag", f"{diag[i]:.6g} outside [{lo}, {hi}]", int(i)))
        offd = phi.copy()
        offd.flat[:: n + 1] = 0.0
        for r, c in np.argwhere(~(np.abs(offd) <= 1.0))[:20]:
            out.append(Violation("kinship", f"off-diagonal {phi[r, c]:.6g} outside [-1, 1]", (int(r), int(c))))

    if xl.shape != (n, dims.q):
        out.append(Violation("covariates", f"shape {xl.shape}, expected {(n, dims.q)}"))
    else:
        for r in np.flatnonzero(xl[:, 0] != 1.0)[:20]:
            out.append(Violation("covariates.intercept", f"entry {xl[r, 0]!r} is not 1.0", int(r)))
        if not np.all(np.isfinite(xl)):
            out.append(Violation("covariates", "non-finite entries"))
        elif n >= dims.q and not _xl_rank_ok(xl):
            out.append(Violation("covariates", "not of full column rank"))

    if y.shape != (n, dims.t):
        out.append(Violation("phenotypes", f"shape {y.shape}, expected {(n, dims.t)}"))
    else:
        for j in np.flatnonzero(~np.all(np.isfinite(y), axis=0)):
            out.append(Violation("phenotypes", "non-finite entries", int(j)))

    if len(params) != dims.t:
        out.append(Violation("params", f"{len(params)} trait parameter sets for t={dims.t}"))
    for j, p in enumerate(params):
        out.extend(p.violations(j))
    return out


def _readonly(a: np.ndarray) -> np.ndarray:
    v = a.view()
    v.flags.writeable = False
    return v


def validate_dataset(dims: Dimensions, phi, xl, y, params: Sequence[TraitParams]) -> Dataset:
    """Check every invariant and return an immutable :class:`Dataset`.

    Raises :class:`ValidationError` carrying the full violation list.
    """
    params = tuple(p if isinstance(p, TraitParams) else TraitParams(*p) for p in params)
    bad = check_dataset(dims, phi, xl, y, params)
    if bad:
        raise ValidationError(bad)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    return Dataset(
        dims=dims,
        phi=_readonly(np.asarray(phi, dtype=np.float64)),
        xl=_readonly(np.asarray(xl, dtype=np.float64)),
        y=_readonly(y),
        params=params,
    )
