import numpy as np
import pytest

from glsweep.chol import precompute_chol, process_block_chol, solve_single_chol, sweep_chol, whiten_block
from glsweep.errors import IndefiniteError
from glsweep.kernels import STATUS_COLLINEAR, STATUS_INDEFINITE_COVARIANCE, STATUS_OK, get_backend
from glsweep.model import Dimensions, GenotypeBlock, TraitParams, validate_dataset
from glsweep.results import compare_grids
from glsweep.naive import solve_gls_naive, sweep_naive
from glsweep.streamio import ResultWriter, read_results
from glsweep.sweep import FAIL_FAST

from conftest import make_dataset, random_spd

IDENT = TraitParams(1.0, 0.5)


@pytest.mark.parametrize(
    "x, y, beta",
    [
        (np.ones((3, 1)), [1.0, 2.0, 3.0], [2.0]),
        (np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]]), [1.0, 3.0, 5.0], [1.0, 2.0]),
    ],
)
def test_single_matches_closed_form(x, y, beta):
    r = solve_single_chol(np.eye(3), TraitParams(1.0, 0.0), x, np.array(y))
    np.testing.assert_allclose(r.beta, beta, rtol=1e-10)


def test_single_matches_oracle(rng):
    n = 100
    ds, g, _ = make_dataset(n, 1, 1, seed=11)
    x = np.column_stack([ds.xl, g[:, 0]])
    a = solve_single_chol(ds.phi, ds.params[0], x, ds.y[:, 0])
    b = solve_gls_naive(ds.phi, ds.params[0], x, ds.y[:, 0])
    np.testing.assert_allclose(a.beta, b.beta, rtol=1e-9)
    np.testing.assert_allclose(a.stderr, b.stderr, rtol=1e-9)


def test_identity_kinship_is_ols(rng):
    n = 40
    x = np.column_stack([np.ones(n), rng.standard_normal((n, 2))])
    y = rng.standard_normal(n)
    r = solve_single_chol(np.eye(n), TraitParams(1.0, 0.6), x, y)
    np.testing.assert_allclose(r.beta, np.linalg.lstsq(x, y, rcond=None)[0], rtol=1e-10)


def test_precompute_identity_whitening(rng):
    n = 10
    xl = np.column_stack([np.ones(n), rng.standard_normal(n)])
    ctx = precompute_chol(np.eye(n), TraitParams(1.0, 0.3), xl, np.zeros(n))
    np.testing.assert_allclose(ctx.xl_white, xl, rtol=1e-15)
    np.testing.assert_allclose(ctx.s_tl, xl.T @ xl, rtol=1e-14)
    assert not ctx.b_t.any()


def test_precompute_recomputes_from_scratch(small_data):
    ds, _, _ = small_data
    be = get_backend("optimized")
    ctx = precompute_chol(ds.phi, ds.params[1], ds.xl, ds.y[:, 1], backend=be)
    again = be.cross_product(be.tri_solve_left(ctx.l, np.array(ds.xl, order="F")))
    np.testing.assert_allclose(ctx.s_tl, again, rtol=1e-12)


def test_precompute_indefinite():
    phi = np.full((5, 5), -0.9) + 1.9 * np.eye(5)
    with pytest.raises(IndefiniteError):
        precompute_chol(phi, TraitParams(1.0, 1.0), np.ones((5, 1)), np.ones(5), trait_index=3)


def test_whiten_identity_and_residual(small_data, rng):
    ds, g, _ = small_data
    block = g[:, :16].copy(order="F")
    ctx = precompute_chol(np.eye(ds.dims.n), TraitParams(1.0, 0.2), ds.xl, ds.y[:, 0])
    np.testing.assert_array_equal(whiten_block(ctx, block.copy(order="F")), block)
    ctx = precompute_chol(ds.phi, ds.params[0], ds.xl, ds.y[:, 0])
    out = whiten_block(ctx, block.copy(order="F"))
    lo = np.tril(ctx.l)
    assert np.abs(lo @ out - block).max() <= 1e-12 * np.abs(block).max()
    one = whiten_block(ctx, block[:, 3:4].copy(order="F"))
    np.testing.assert_allclose(one[:, 0], out[:, 3], rtol=1e-13, atol=1e-15)


def test_process_block_matches_oracle():
    ds, g, _ = make_dataset(64, 16, 1, seed=5)
    ctx = precompute_chol(ds.phi, ds.params[0], ds.xl, ds.y[:, 0])
    res = process_block_chol(ctx, whiten_block(ctx, g.copy(order="F")))
    for i in range(16):
        x = np.column_stack([ds.xl, g[:, i]])
        ref = solve_gls_naive(ds.phi, ds.params[0], x, ds.y[:, 0])
        np.testing.assert_allclose(res.beta[i], ref.beta, rtol=1e-9)
        np.testing.assert_allclose(res.stderr[i], ref.stderr, rtol=1e-9)


def test_bordered_matrix_equals_dense_cross_product():
    ds, g, _ = make_dataset(64, 4, 1, seed=6)
    ctx = precompute_chol(ds.phi, ds.params[0], ds.xl, ds.y[:, 0])
    gw = whiten_block(ctx, g.copy(order="F"))
    for i in range(4):
        full = np.column_stack([ctx.xl_white, gw[:, i]])
        dense = full.T @ full
        np.testing.assert_allclose(dense[:-1, :-1], ctx.s_tl, rtol=1e-12)
        np.testing.assert_allclose(dense[-1, :-1], ctx.xl_white.T @ gw[:, i], rtol=1e-12)


def test_monomorphic_snp_is_collinear(small_data):
    ds, g, _ = small_data
    g = g.copy(order="F")
    g[:, 3] = 2.0
    summ = sweep_chol(ds, 0, g, block_size=8)
    assert summ.sink.status[0, 3] == STATUS_COLLINEAR
    assert summ.failures == 1
    with pytest.raises(Exception) as info:
        sweep_chol(ds, 0, g, error_policy=FAIL_FAST)
    assert getattr(info.value, "snp_index", None) == 3


def test_single_snp_sweep_equals_single_solve(small_data):
    ds, g, _ = small_data
    one = validate_dataset(Dimensions(ds.dims.n, 1, ds.dims.t, ds.dims.c), ds.phi, ds.xl, ds.y, ds.params)
    beta, se, _ = sweep_chol(one, 2, g[:, :1]).sink.trait(2)
    r = solve_single_chol(ds.phi, ds.params[2], np.column_stack([ds.xl, g[:, 0]]), ds.y[:, 2])
    np.testing.assert_allclose(beta[0], r.beta, rtol=1e-12)
    np.testing.assert_allclose(se[0], r.stderr, rtol=1e-12)


@pytest.mark.parametrize("workers", [1, 3])
def test_block_sizes_give_equal_files(tmp_path, workers):
    ds, g, _ = make_dataset(48, 70, 2, seed=9)
    grids = []
    for k in (1, 7, 64):
        path = tmp_path / f"k{k}.res"
        sweep_chol(ds, [0, 1], g, ResultWriter(path, 70, ds.dims.w, [0, 1]), block_size=k, workers=workers)
        grids.append(read_results(path))
    ref = tuple(grids[0].grid(f) for f in ("beta", "stderr", "status"))
    for other in grids[1:]:
        cmp = compare_grids(tuple(other.grid(f) for f in ("beta", "stderr", "status")), ref)
        assert cmp.max_rel <= 1e-12 and cmp.status_mismatches == 0


def test_sweep_matches_naive_sweep():
    ds, g, _ = make_dataset(96, 120, 1, seed=13)
    a = sweep_chol(ds, 0, g, block_size=32).sink
    b = sweep_naive(ds, g).sink
    np.testing.assert_allclose(a.beta, b.beta, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(a.stderr, b.stderr, rtol=1e-8)


def test_indefinite_trait_is_marked_and_others_continue(small_data):
    ds, g, _ = small_data
    n = ds.dims.n
    bad_phi = np.full((n, n), -0.5) + 1.5 * np.eye(n)
    bad = validate_dataset(ds.dims, bad_phi, ds.xl, ds.y, [TraitParams(1.0, 1.0), TraitParams(1.0, 0.0), ds.params[2]])
    summ = sweep_chol(bad, [0, 1], g)
    assert np.all(summ.sink.status[0] == STATUS_INDEFINITE_COVARIANCE)
    assert np.all(summ.sink.status[1] == STATUS_OK)
    with pytest.raises(IndefiniteError):
        sweep_chol(bad, 0, g, error_policy=FAIL_FAST)


def test_whitening_uses_panel_products_not_square_gemms(small_data):
    ds, g, _ = small_data
    summ = sweep_chol(ds, 0, g, block_size=8)
    calls = summ.kernel_calls
    assert calls["chol_factor"] == 1
    assert calls["tri_solve_left"] == 2 + 5  # xl and y, then one per block
    assert calls["gemm_t:square"] == 0
