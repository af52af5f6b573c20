import numpy as np
import pytest

from glsweep.datagen import TraitSpec, gen_covariates, gen_kinship, gen_traits, genotype_array
from glsweep.model import Dimensions, validate_dataset

_ACCEPTANCE = []


def make_dataset(n, m, t, c=2, seed=0, trait_specs=None):
    """In-memory seeded dataset; returns ``(dataset, genotypes, truth)``."""
    phi = gen_kinship(n, seed)
    xl = gen_covariates(n, c, seed)
    g = genotype_array(n, m, seed)
    specs = trait_specs if trait_specs is not None else [TraitSpec() for _ in range(t)]
    y, params, truth = gen_traits(phi, xl, g, specs, seed)
    ds = validate_dataset(Dimensions(n=n, m=m, t=len(specs), c=c), phi, xl, y, params)
    return ds, g, truth


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_data():
    return make_dataset(64, 40, 3, seed=7)


def random_spd(rng, n, shift=None):
    a = rng.standard_normal((n, n))
    return a @ a.T + (n if shift is None else shift) * np.eye(n)


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(number, passed, detail):
        line = f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":").rstrip("abcd") or 0)):
        terminalreporter.write_line(line)
