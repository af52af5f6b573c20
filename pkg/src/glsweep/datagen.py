"""Deterministic synthetic GWAS datasets.

All randomness comes from numpy's Philox counter-based generator, keyed by
``(seed, stream, ...)`` so each file has its own stream and adding traits or
SNPs never perturbs the ones already drawn.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import bundle
from .errors import ConfigError
from .kernels import get_backend
from .model import TraitParams, assemble_covariance
from .streamio import MatrixWriter, as_source, write_matrix

_GENOTYPES, _KINSHIP, _COVARIATES, _TRAITS = 1, 2, 3, 4
CHUNK_COLS = 1024
MAF_RANGE = (0.05, 0.5)
H2_RANGE = (0.2, 0.8)
SIGMA2_RANGE = (0.5, 2.0)


def rng_for(seed, *stream) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *stream])))


def _genotype_chunks(n, m, seed):
    rng = rng_for(seed, _GENOTYPES)
    maf = rng.uniform(*MAF_RANGE, size=m)
    for start in range(0, m, CHUNK_COLS):
        stop = min(start + CHUNK_COLS, m)
        g = rng.binomial(2, maf[start:stop][:, None], size=(stop - start, n)).astype(np.float64)
        yield start, g.T


def genotype_array(n, m, seed) -> np.ndarray:
    out = np.empty((n, m), order="F")
    for start, g in _genotype_chunks(n, m, seed):
        out[:, start : start + g.shape[1]] = g
    return out


def gen_genotypes(n, m, seed, out) -> Path:
    """Write an n x m dosage matrix (values 0/1/2); per-SNP minor-allele
    frequency ~ U(0.05, 0.5)."""
    with MatrixWriter(out, n, m) as w:
        for _, g in _genotype_chunks(n, m, seed):
            w.write_columns(g)
    return Path(out)


def gen_kinship(n, seed, q=None) -> np.ndarray:
    """Kinship from ``q = 4n`` standardized auxiliary genotypes.

    ``0.95 A A'/q + 0.05 I`` rescaled to unit diagonal; symmetric exactly and
    positive definite.
    """
    q = 4 * n if q is None else q
    rng = rng_for(seed, _KINSHIP)
    maf = rng.uniform(*MAF_RANGE, size=q)
    acc = np.zeros((n, n))
    for start in range(0, q, CHUNK_COLS):
        stop = min(start + CHUNK_COLS, q)
        a = rng.binomial(2, maf[start:stop][:, None], size=(stop - start, n)).astype(np.float64).T
        a -= a.mean(axis=0)
        sd = a.std(axis=0)
        a = np.divide(a, sd, out=np.zeros_like(a), where=sd > 0)
        acc += a @ a.T
    phi = 0.95 * acc / q
    phi.flat[:: n + 1] += 0.05
    d = np.sqrt(np.diag(phi))
    phi /= np.outer(d, d)
    lower = np.tril(phi)
    phi = lower + np.tril(phi, -1).T
    return phi


def gen_covariates(n, c, seed) -> np.ndarray:
    """Intercept, then sex ~ Bernoulli(0.5), age ~ U(20, 80), then N(0, 1)."""
    rng = rng_for(seed, _COVARIATES)
    xl = np.empty((n, c + 1))
    xl[:, 0] = 1.0
    for j in range(1, c + 1):
        if j == 1:
            xl[:, j] = rng.binomial(1, 0.5, size=n)
        elif j == 2:
            xl[:, j] = rng.uniform(20.0, 80.0, size=n)
        else:
            xl[:, j] = rng.standard_normal(n)
    return xl


@dataclass
class TraitSpec:
    """Per-trait generation knobs; ``None`` means draw at random."""

    sigma2: float | None = None
    h2: float | None = None
    beta_fixed: list | None = None
    causal: dict | None = None  # snp index -> effect
    n_causal: int = 2
    effect_scale: float = 0.5


def gen_traits(phi, xl, genotypes, trait_specs, seed, backend=None):
    """Simulate ``y_j = X_L b + G_causal e + L_j eps`` with ``L_j L_j' = M_j``.

    Returns ``(Y, params, manifest)`` where the manifest records every true
    effect and the planted causal SNPs.
    """
    be = get_backend(backend)
    src = as_source(genotypes)
    n, q = xl.shape
    m = src.n_cols
    specs = [s if isinstance(s, TraitSpec) else TraitSpec(**s) for s in trait_specs]
    y = np.empty((n, len(specs)))
    params = []
    truth = []
    col = np.empty((1, n))
    for j, spec in enumerate(specs):
        rng = rng_for(seed, _TRAITS, j)
        sigma2 = float(rng.uniform(*SIGMA2_RANGE)) if spec.sigma2 is None else float(spec.sigma2)
        h2 = float(rng.uniform(*H2_RANGE)) if spec.h2 is None else float(spec.h2)
        p = TraitParams(sigma2, h2).check()
        if spec.beta_fixed is None:
            beta_fixed = rng.normal(0.0, 1.0, size=q)
        else:
            beta_fixed = np.asarray(spec.beta_fixed, dtype=np.float64)
            if beta_fixed.shape != (q,):
                raise ConfigError(f"trait {j}: beta_fixed needs {q} entries")
        if spec.causal is None:
            k = min(spec.n_causal, m)
            idx = np.sort(rng.choice(m, size=k, replace=False)) if k else np.empty(0, dtype=np.int64)
            eff = rng.normal(0.0, spec.effect_scale, size=k)
            causal = {int(i): float(e) for i, e in zip(idx, eff)}
        else:
            causal = {int(i): float(e) for i, e in spec.causal.items()}
        mean = xl @ beta_fixed
        for i, e in sorted(causal.items()):
            src.read_into(i, i + 1, col)
            mean += e * col[0]
        eps = rng.standard_normal(n)
        lo = be.chol_factor(assemble_covariance(phi, p), overwrite=True)
        y[:, j] = mean + lo @ eps
        params.append(p)
        truth.append({
            "trait": j,
            "sigma2": sigma2,
            "h2": h2,
            "beta_fixed": [float(b) for b in beta_fixed],
            "causal": {str(i): e for i, e in sorted(causal.items())},
        })
    return y, params, {"traits": truth}


# -- scenarios ---------------------------------------------------------------------

#: experiment grids as published; the varied axis lists every value
PRESETS = {
    "A": {"n": [1000, 5000, 10000, 20000, 40000], "m": 10_000_000, "t": 1, "c": 2},
    "B": {"n": 10_000, "m": [1_000_000, 10_000_000, 36_000_000], "t": 1, "c": 2},
    "C": {"n": 1000, "m": 1_000_000, "t": [1, 10, 100, 1000, 10_000, 100_000], "c": 2},
}
MIN_N = 64


@dataclass
class ScenarioSpec:
    preset: str = "custom"
    n: int | None = None
    m: int | None = None
    t: int | None = None
    c: int | None = None
    scale: int = 1
    seed: int = 0
    point: int = -1  # index into the preset's varied axis; -1 = largest

    def resolve(self) -> dict:
        """Concrete (n, m, t, c) after scaling, clamping and overrides.

        Every preset size is divided by ``scale``; n is clamped to >= 64 and
        m, t to >= 1. Explicit n/m/t/c fields override the result.
        """
        if self.scale < 1:
            raise ConfigError("scale must be >= 1")
        if self.preset == "custom":
            base = {"n": self.n, "m": self.m, "t": self.t, "c": 2 if self.c is None else self.c}
            missing = [k for k, v in base.items() if v is None]
            if missing:
                raise ConfigError(f"custom scenario needs {', '.join(missing)}")
            sizes = dict(base)
        else:
            if self.preset not in PRESETS:
                raise ConfigError(f"unknown preset {self.preset!r}")
            sizes = {}
            for key, val in PRESETS[self.preset].items():
                if isinstance(val, list):
                    val = val[self.point]
                if key == "c":
                    sizes[key] = val
                    continue
                floor = MIN_N if key == "n" else 1
                sizes[key] = max(floor, val // self.scale)
            for key in ("n", "m", "t", "c"):
                if getattr(self, key) is not None:
                    sizes[key] = int(getattr(self, key))
        if sizes["n"] < 8 or sizes["m"] < 1 or sizes["t"] < 1 or sizes["c"] < 0:
            raise ConfigError(f"scenario sizes too small: {sizes}")
        if sizes["n"] < sizes["c"] + 2:
            raise ConfigError(f"n={sizes['n']} cannot support c={sizes['c']} covariates")
        return sizes


@dataclass
class ScenarioBundle:
    folder: Path
    sizes: dict
    manifest: dict = field(default_factory=dict)

    @property
    def paths(self) -> bundle.BundlePaths:
        return bundle.BundlePaths.from_dir(self.folder)

    def load(self):
        return bundle.load_bundle(self.paths)


def gen_scenario(spec: ScenarioSpec, out_dir, trait_specs=None) -> ScenarioBundle:
    """Write kinship, covariates, genotypes, phenotypes, params and manifest."""
    sizes = spec.resolve()
    n, m, t, c = sizes["n"], sizes["m"], sizes["t"], sizes["c"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    phi = gen_kinship(n, spec.seed)
    write_matrix(out / bundle.KINSHIP, phi)
    xl = gen_covariates(n, c, spec.seed)
    write_matrix(out / bundle.COVARIATES, xl)
    gen_genotypes(n, m, spec.seed, out / bundle.GENOTYPES)
    if trait_specs is None:
        trait_specs = [TraitSpec() for _ in range(t)]
    y, params, truth = gen_traits(phi, xl, out / bundle.GENOTYPES, trait_specs, spec.seed)
    write_matrix(out / bundle.PHENOTYPES, y)
    bundle.write_params(out / bundle.PARAMS, params)
    manifest = {
        "scenario": asdict(spec),
        "sizes": dict(sizes, w=c + 2),
        "published_grid": PRESETS.get(spec.preset),
        "generator": "numpy Philox",
        "numpy_version": np.__version__,
        "files": {
            "kinship": bundle.KINSHIP,
            "covariates": bundle.COVARIATES,
            "genotypes": bundle.GENOTYPES,
            "phenotypes": bundle.PHENOTYPES,
            "params": bundle.PARAMS,
        },
        **truth,
    }
    (out / bundle.MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    return ScenarioBundle(out, sizes, manifest)
