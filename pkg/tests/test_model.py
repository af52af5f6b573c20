import numpy as np
import pytest

from glsweep.datagen import ScenarioSpec, gen_covariates, gen_kinship, gen_traits, genotype_array, TraitSpec
from glsweep.errors import IndefiniteError, ValidationError
from glsweep.model import (
    EPS_SPD,
    Dimensions,
    GenotypeBlock,
    TraitParams,
    assemble_covariance,
    assemble_spectral_weights,
    check_dataset,
    validate_dataset,
)


def test_covariance_h2_zero_is_scaled_identity(rng):
    a = rng.standard_normal((5, 5))
    phi = a + a.T
    np.testing.assert_array_equal(assemble_covariance(phi, TraitParams(1.0, 0.0)), np.eye(5))


def test_covariance_identity_kinship():
    np.testing.assert_array_equal(assemble_covariance(np.eye(2), TraitParams(2.0, 1.0)), 2 * np.eye(2))


def test_covariance_two_by_two():
    phi = np.array([[1.0, 0.5], [0.5, 1.0]])
    got = assemble_covariance(phi, TraitParams(2.0, 0.5))
    np.testing.assert_allclose(got, [[2.0, 0.5], [0.5, 2.0]], rtol=0, atol=1e-15)


def test_covariance_exactly_symmetric_and_in_place(rng):
    phi = gen_kinship(30, 3)
    out = np.empty((30, 30), order="F")
    m = assemble_covariance(phi, TraitParams(1.3, 0.7), out=out)
    assert m is out
    assert np.array_equal(m, m.T)


@pytest.mark.parametrize(
    "w, params, expected",
    [
        ([1, 1, 1], TraitParams(1.0, 0.5), [1, 1, 1]),
        ([3, 1], TraitParams(1.0, 0.5), [0.5, 1.0]),
        ([2, 0.5], TraitParams(2.0, 0.0), [0.5, 0.5]),
    ],
)
def test_spectral_weights(w, params, expected):
    np.testing.assert_allclose(assemble_spectral_weights(w, params), expected, rtol=1e-15)


def test_spectral_weights_reject_nonpositive_then_clamp():
    with pytest.raises(IndefiniteError) as info:
        assemble_spectral_weights([1.0, -0.5, 2.0], TraitParams(1.0, 1.0))
    assert info.value.pivot == 1
    d = assemble_spectral_weights([1.0, -0.5], TraitParams(1.0, 1.0), clamp=True)
    assert d[1] == pytest.approx(1 / EPS_SPD)


@pytest.fixture(scope="module")
def scenario_c():
    sizes = ScenarioSpec(preset="C", scale=1000).resolve()
    n, m, t, c = sizes["n"], 50, sizes["t"], sizes["c"]
    phi = gen_kinship(n, 0)
    xl = gen_covariates(n, c, 0)
    y, params, _ = gen_traits(phi, xl, genotype_array(n, m, 0), [TraitSpec() for _ in range(t)], 0)
    return Dimensions(n, m, t, c), phi, xl, y, params


def test_clean_dataset_has_no_violations(scenario_c):
    assert check_dataset(*scenario_c) == []


def test_zero_intercept_named_by_row(scenario_c):
    dims, phi, xl, y, params = scenario_c
    xl = xl.copy()
    xl[5, 0] = 0.0
    bad = check_dataset(dims, phi, xl, y, params)
    assert [(v.field, v.index) for v in bad] == [("covariates.intercept", 5)]


def test_out_of_range_heritability_names_trait(scenario_c):
    dims, phi, xl, y, params = scenario_c
    params = list(params)
    params[3] = TraitParams(1.0, 1.2)
    bad = check_dataset(dims, phi, xl, y, params)
    assert [(v.field, v.index) for v in bad] == [("params.h2", 3)]


def test_validate_collects_every_violation(scenario_c):
    dims, phi, xl, y, params = scenario_c
    phi = phi.copy()
    phi[0, 1] += 1e-6
    y = y.copy()
    y[0, 2] = np.nan
    with pytest.raises(ValidationError) as info:
        validate_dataset(dims, phi, xl, y, params)
    fields = {v.field for v in info.value.violations}
    assert fields == {"kinship", "phenotypes"}


def test_validated_dataset_is_read_only(small_data):
    ds, _, _ = small_data
    with pytest.raises(ValueError):
        ds.phi[0, 0] = 2.0


def test_rank_deficient_covariates():
    n = 20
    xl = np.ones((n, 3))
    xl[:, 1] = np.arange(n)
    xl[:, 2] = 2 * xl[:, 1]
    dims = Dimensions(n, 1, 1, 2)
    bad = check_dataset(dims, np.eye(n), xl, np.zeros(n), [TraitParams(1, 0.5)])
    assert any("rank" in v.message for v in bad)


def test_dimensions_derived_widths():
    d = Dimensions(n=100, m=10, t=2, c=3)
    assert (d.w, d.q) == (5, 4)
    assert Dimensions(n=3, m=1, t=1, c=2).violations()


def test_genotype_block_dosage_check():
    blk = GenotypeBlock(np.array([[0.0, 2.0], [3.0, 1.0]]), first_snp_index=10)
    (v,) = blk.dosage_violations()
    assert v.index == (1, 10)
    assert list(blk.snp_indices) == [10, 11]
