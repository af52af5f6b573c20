"""On-disk dataset bundles: the file set written by the generator and read
by the CLI."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .model import Dimensions, TraitParams, validate_dataset
from .streamio import MatrixFile, read_header, read_matrix

KINSHIP = "kinship.gmat"
COVARIATES = "covariates.gmat"
GENOTYPES = "genotypes.gmat"
PHENOTYPES = "phenotypes.gmat"
PARAMS = "params.json"
MANIFEST = "manifest.json"


@dataclass
class BundlePaths:
    kinship: Path
    covariates: Path
    genotypes: Path
    phenotypes: Path
    params: Path

    @classmethod
    def from_dir(cls, folder, **overrides):
        folder = Path(folder) if folder is not None else None
        names = {"kinship": KINSHIP, "covariates": COVARIATES, "genotypes": GENOTYPES,
                 "phenotypes": PHENOTYPES, "params": PARAMS}
        out = {}
        for key, default in names.items():
            if overrides.get(key) is not None:
                out[key] = Path(overrides[key])
            elif folder is not None:
                out[key] = folder / default
            else:
                raise ConfigError(f"no path for {key}: pass --{key} or --data")
        return cls(**out)

    def check_exist(self):
        for key in ("kinship", "covariates", "genotypes", "phenotypes", "params"):
            p = getattr(self, key)
            if not p.is_file():
                raise ConfigError(f"{key} file not found: {p}")


def write_params(path, params):
    doc = {"traits": [{"sigma2": float(p.sigma2), "h2": float(p.h2)} for p in params]}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_params(path) -> list[TraitParams]:
    try:
        doc = json.loads(Path(path).read_text())
        return [TraitParams(float(d["sigma2"]), float(d["h2"])) for d in doc["traits"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed trait parameter file: {exc}", path) from exc


def load_bundle(paths: BundlePaths):
    """Read and validate everything; return ``(dataset, genotype_source)``.

    Headers are checked for mutual consistency before any bulk read.
    """
    paths.check_exist()
    hk = read_header(paths.kinship)
    hc = read_header(paths.covariates)
    hg = read_header(paths.genotypes)
    hp = read_header(paths.phenotypes)
    n = hk.rows
    for name, h in (("covariates", hc), ("genotypes", hg), ("phenotypes", hp)):
        if h.rows != n:
            raise FormatError(f"{name} has {h.rows} rows but kinship has {n}", getattr(paths, name), 10)
    if hk.cols != n:
        raise FormatError(f"kinship is {hk.rows} x {hk.cols}, not square", paths.kinship, 18)
    params = read_params(paths.params)
    dims = Dimensions(n=n, m=hg.cols, t=hp.cols, c=hc.cols - 1)
    ds = validate_dataset(
        dims,
        np.ascontiguousarray(read_matrix(paths.kinship)),
        read_matrix(paths.covariates),
        read_matrix(paths.phenotypes),
        params,
    )
    return ds, MatrixFile(paths.genotypes)
