"""Acceptance criteria 1-10.

Each test prints one ``ACCEPTANCE <n>: PASS|FAIL | detail`` line (collected
again in the terminal summary) and then asserts the verdict.
"""

import time
import tracemalloc

import numpy as np
import pytest

from glsweep.bench import SUITES, run_suite
from glsweep.chol import sweep_chol
from glsweep.datagen import ScenarioSpec, TraitSpec, gen_scenario
from glsweep.eig import sweep_eig
from glsweep.kernels import OptimizedBackend, ReferenceBackend, warm_up
from glsweep.naive import sweep_naive
from glsweep.results import compare_grids
from glsweep.streamio import ArraySource, ResultWriter, read_results

from conftest import make_dataset

ORACLE_1D_TOL = 1e-8
ORACLE_2D_TOL = 1e-7
CROSS_ENGINE_TOL = 1e-7
BLOCK_TOL = 1e-12
SPEEDUP_FLOOR = 10.0
MEMORY_SLACK = 1.25
OVERLAP_DOUBLE = 1.2
OVERLAP_SERIAL = 0.8


def grids(path):
    table = read_results(path)
    return table.grid("beta"), table.grid("stderr"), table.grid("status")


def scenario(tmp_path, name, **sizes):
    return gen_scenario(ScenarioSpec(seed=sizes.pop("seed", 0), **sizes), tmp_path / name).load()


def solve_to_file(engine, ds, source, path, traits=None, **kw):
    traits = list(range(ds.dims.t)) if traits is None else traits
    sink = ResultWriter(path, ds.dims.m, ds.dims.w, traits)
    if engine == "naive":
        return sweep_naive(ds, source, sink, traits=traits, **kw)
    if engine == "chol":
        return sweep_chol(ds, traits, source, sink, **kw)
    return sweep_eig(ds, source, sink, traits=traits, **kw)


def test_1_oracle_equivalence_1d(tmp_path, acceptance):
    ds, src = scenario(tmp_path, "data", n=128, m=512, t=1, c=2, seed=11)
    t0 = time.perf_counter()
    with src:
        solve_to_file("naive", ds, src, tmp_path / "naive.res")
        solve_to_file("chol", ds, src, tmp_path / "chol.res")
    elapsed = time.perf_counter() - t0
    cmp = compare_grids(grids(tmp_path / "chol.res"), grids(tmp_path / "naive.res"))
    ok = cmp.max_rel <= ORACLE_1D_TOL and cmp.status_mismatches == 0 and elapsed < 60
    acceptance(1, ok, f"chol vs naive max_rel={cmp.max_rel:.2e} (<= {ORACLE_1D_TOL}) over {cmp.compared} "
                      f"problems, {elapsed:.2f}s (< 60s)")
    assert ok


def test_2_oracle_equivalence_2d(tmp_path, acceptance):
    ds, src = scenario(tmp_path, "data", n=128, m=256, t=8, c=2, seed=12)
    t0 = time.perf_counter()
    with src:
        solve_to_file("naive", ds, src, tmp_path / "naive.res")
        solve_to_file("eig", ds, src, tmp_path / "eig.res", scratch=tmp_path)
    elapsed = time.perf_counter() - t0
    cmp = compare_grids(grids(tmp_path / "eig.res"), grids(tmp_path / "naive.res"))
    ok = cmp.max_rel <= ORACLE_2D_TOL and cmp.status_mismatches == 0 and elapsed < 120
    acceptance(2, ok, f"eig vs naive max_rel={cmp.max_rel:.2e} (<= {ORACLE_2D_TOL}) over {cmp.compared} "
                      f"problems, {elapsed:.2f}s (< 120s)")
    assert ok


def test_3_cross_engine(tmp_path, acceptance):
    ds, src = scenario(tmp_path, "data", n=128, m=512, t=1, c=2, seed=13)
    with src:
        solve_to_file("chol", ds, src, tmp_path / "chol.res")
        solve_to_file("eig", ds, src, tmp_path / "eig.res", scratch=tmp_path)
    cmp = compare_grids(grids(tmp_path / "chol.res"), grids(tmp_path / "eig.res"))
    ok = cmp.max_rel <= CROSS_ENGINE_TOL and cmp.status_mismatches == 0
    acceptance(3, ok, f"chol vs eig on t=1 max_rel={cmp.max_rel:.2e} (<= {CROSS_ENGINE_TOL})")
    assert ok


def test_4_block_invariance(tmp_path, acceptance):
    ds, src = scenario(tmp_path, "data", n=128, m=300, t=2, c=2, seed=14)
    worst = {}
    with src:
        for engine in ("chol", "eig"):
            kw = {"scratch": tmp_path} if engine == "eig" else {}
            paths = {}
            for k in (1, 7, 64, 256):
                paths[k] = tmp_path / f"{engine}-{k}.res"
                solve_to_file(engine, ds, src, paths[k], block_size=k, **kw)
            ref = grids(paths[256])
            cmps = [compare_grids(grids(paths[k]), ref) for k in (1, 7, 64)]
            worst[engine] = max(c.max_rel for c in cmps)
            worst[engine + "_status"] = sum(c.status_mismatches for c in cmps)
    ok = all(worst[e] <= BLOCK_TOL and worst[e + "_status"] == 0 for e in ("chol", "eig"))
    acceptance(4, ok, f"k in {{1,7,64,256}}: chol max_rel={worst['chol']:.2e}, eig max_rel={worst['eig']:.2e} "
                      f"(<= {BLOCK_TOL})")
    assert ok


SUITE_LABELS = {"naive-n": "5a", "chol-m": "5b", "chol-n": "5c", "eig-t": "5d", "eig-n": "5d"}


@pytest.mark.slow
@pytest.mark.parametrize("suite", list(SUITES))
def test_5_complexity_slopes(suite, tmp_path, acceptance):
    t0 = time.perf_counter()
    report = run_suite(suite, workdir=tmp_path)
    elapsed = time.perf_counter() - t0
    print(report.render())
    fits = f"slope={report.fit.slope:.3f}"
    if report.fit_dropped is not None:
        fits += f" (drop-smallest {report.fit_dropped.slope:.3f})"
    ok = bool(report.passed) and elapsed < 600
    acceptance(SUITE_LABELS[suite], ok,
               f"{report.engine} {report.phase} vs {report.axis} [{report.backend} kernels]: {fits}, "
               f"expected {report.expected} +/- {report.tolerance}, {elapsed:.0f}s (< 600s)")
    assert ok


@pytest.mark.slow
def test_6_speedup(tmp_path, acceptance):
    ds, src = scenario(tmp_path, "data", n=512, m=20_000, t=8, c=2, seed=16)
    with src:
        t0 = time.perf_counter()
        solve_to_file("eig", ds, src, tmp_path / "eig.res", scratch=tmp_path)
        t_eig = time.perf_counter() - t0
        t0 = time.perf_counter()
        solve_to_file("naive", ds, src, tmp_path / "naive.res")
        t_naive = time.perf_counter() - t0
    cmp = compare_grids(grids(tmp_path / "eig.res"), grids(tmp_path / "naive.res"))
    ratio = t_naive / t_eig
    ok = ratio >= SPEEDUP_FLOOR
    acceptance(6, ok, f"n=512 m=20000 t=8: naive {t_naive:.1f}s, eig {t_eig:.2f}s, speedup {ratio:.0f}x "
                      f"(>= {SPEEDUP_FLOOR:.0f}x); max_rel={cmp.max_rel:.1e}")
    assert ok


def test_7_memory_bounds(tmp_path, acceptance):
    n, k = 512, 256
    ds, src = scenario(tmp_path, "data", n=n, m=2048, t=2, c=2, seed=17)
    w = ds.dims.w
    warm_up()
    peaks = {}
    with src:
        for engine in ("chol", "eig"):
            kw = {"scratch": tmp_path} if engine == "eig" else {}
            tracemalloc.start()
            try:
                solve_to_file(engine, ds, src, tmp_path / f"{engine}.res", block_size=k, **kw)
                peaks[engine] = tracemalloc.get_traced_memory()[1]
            finally:
                tracemalloc.stop()
    bounds = {
        "chol": MEMORY_SLACK * 8 * (n * n + k * n * w),
        "eig": MEMORY_SLACK * 8 * (2 * n * n + k * n * w),
    }
    ok = all(peaks[e] <= bounds[e] for e in bounds)
    acceptance(7, ok, f"n={n} k={k} w={w}: chol peak {peaks['chol'] / 1e6:.2f} MB <= {bounds['chol'] / 1e6:.2f} MB, "
                      f"eig peak {peaks['eig'] / 1e6:.2f} MB <= {bounds['eig'] / 1e6:.2f} MB")
    assert ok


class StalledSource(ArraySource):
    def __init__(self, array, delay):
        super().__init__(array)
        self.delay = delay

    def read_into(self, start, stop, out):
        time.sleep(self.delay)
        super().read_into(start, stop, out)


class StalledWriter(ResultWriter):
    delay = 0.0

    def _write(self, block):
        time.sleep(self.delay)
        return super()._write(block)


class StalledBackend:
    """Optimized kernels with a fixed sleep added to each block whitening."""

    name = "optimized"

    def __init__(self, delay, block_cols):
        self.inner = OptimizedBackend()
        self.delay = delay
        self.block_cols = block_cols

    def __getattr__(self, op):
        return getattr(self.inner, op)

    def tri_solve_left(self, lo, b, overwrite=False):
        if b.ndim == 2 and b.shape[1] == self.block_cols:
            time.sleep(self.delay)
        return self.inner.tri_solve_left(lo, b, overwrite=overwrite)


def test_8_overlap(tmp_path, acceptance):
    # compute stall per block equals read stall + write stall, so I/O and compute are balanced
    k, blocks, delay = 16, 20, 0.06
    ds, g, _ = make_dataset(64, k * blocks, 1, seed=18)
    out = {}
    for mode, double in (("double", True), ("serial", False)):
        sink = StalledWriter(tmp_path / f"{mode}.res", ds.dims.m, ds.dims.w, [0], background=double)
        sink.delay = delay / 2
        summ = sweep_chol(ds, 0, StalledSource(g, delay / 2), sink, block_size=k,
                          backend=StalledBackend(delay, k), prefetch=double)
        out[mode] = summ.overlap()
    d, s = out["double"], out["serial"]
    d_io = d["read_seconds"] + d["write_seconds"]
    s_io = s["read_seconds"] + s["write_seconds"]
    ok_double = d["wall_seconds"] <= OVERLAP_DOUBLE * max(d["compute_seconds"], d_io)
    ok_serial = s["wall_seconds"] >= OVERLAP_SERIAL * (s["compute_seconds"] + s_io)
    ok = ok_double and ok_serial
    acceptance(8, ok,
               f"double-buffered wall {d['wall_seconds']:.2f}s vs max(compute {d['compute_seconds']:.2f}, "
               f"io {d_io:.2f}) ratio {d['wall_seconds'] / max(d['compute_seconds'], d_io):.2f} (<= {OVERLAP_DOUBLE}); "
               f"serial wall {s['wall_seconds']:.2f}s vs sum {s['compute_seconds'] + s_io:.2f}s ratio "
               f"{s['wall_seconds'] / (s['compute_seconds'] + s_io):.2f} (>= {OVERLAP_SERIAL})")
    assert ok


def test_9_kernel_invariants(acceptance):
    rng = np.random.default_rng(19)
    worst = {"chol": 0.0, "eig": 0.0, "orth": 0.0, "trace": 0.0, "trsm": 0.0}
    failures = []
    for backend in (OptimizedBackend(), ReferenceBackend()):
        for n in (2, 17, 64, 200):
            a = rng.standard_normal((n, n))
            spd = a @ a.T + n * np.eye(n)
            sym = (a + a.T) / 2
            lo = backend.chol_factor(spd)
            chol_res = np.linalg.norm(lo @ lo.T - spd) / np.linalg.norm(spd)
            pair = backend.sym_eig(sym)
            eig_res = np.linalg.norm(pair.z @ np.diag(pair.w) @ pair.z.T - sym) / np.linalg.norm(sym)
            orth = np.abs(pair.z.T @ pair.z - np.eye(n)).max() / n
            trace = abs(pair.w.sum() - np.trace(sym)) / max(np.abs(pair.w).sum(), 1e-300)
            b = rng.standard_normal((n, 7))
            x = backend.tri_solve_left(lo, b.copy(order="F"))
            trsm = np.abs(lo @ x - b).max() / np.abs(b).max()
            for key, val, tol in (("chol", chol_res, 1e-12), ("eig", eig_res, 1e-10), ("orth", orth, 1e-10),
                                  ("trace", trace, 1e-10), ("trsm", trsm, 1e-12)):
                worst[key] = max(worst[key], val)
                if not val <= tol:
                    failures.append(f"{backend.name} n={n} {key}={val:.1e}")
    ok = not failures
    detail = (f"n in {{2,17,64,200}} x {{optimized,reference}}: chol {worst['chol']:.1e} (<= 1e-12), "
              f"eig {worst['eig']:.1e} (<= 1e-10), orthogonality/n {worst['orth']:.1e} (<= 1e-10), "
              f"trace {worst['trace']:.1e} (<= 1e-10), trsm {worst['trsm']:.1e} (<= 1e-12)")
    if failures:
        detail += "; " + ", ".join(failures)
    acceptance(9, ok, detail)
    assert ok


def test_10_planted_effect_recovery(acceptance):
    snp, effect, reps = 5, 1.0, 100
    hits = 0
    z_scores = []
    for seed in range(reps):
        ds, g, truth = make_dataset(128, 16, 1, seed=1000 + seed,
                                    trait_specs=[TraitSpec(sigma2=0.5, causal={snp: effect})])
        summ = sweep_chol(ds, 0, g, block_size=16)
        beta, se, status = summ.sink.trait(0)
        z = abs(beta[snp, -1] - effect) / se[snp, -1]
        z_scores.append(z)
        hits += z <= 5
    ok = hits >= 95
    acceptance(10, ok, f"beta=1, sigma2=0.5: {hits}/{reps} replicates within 5 standard errors (>= 95); "
                       f"max |z|={max(z_scores):.2f}")
    assert ok
