import numpy as np
import pytest

from glsweep.bench import EXPECTED, SUITES, BenchReport, SlopeFit, compare_jit, fit_slope, run_bench, run_suite
from glsweep.errors import ConfigError


def test_fit_slope_recovers_power_law():
    sizes = [100, 200, 400, 800, 1600]
    fit = fit_slope(sizes, [3e-9 * s**2.5 for s in sizes])
    assert fit.slope == pytest.approx(2.5, abs=1e-12)
    assert fit.ci_high - fit.ci_low < 1e-5


def test_fit_slope_ci_widens_with_noise():
    rng = np.random.default_rng(1)
    sizes = np.geomspace(10, 1000, 8)
    fit = fit_slope(sizes, sizes * np.exp(rng.normal(0, 0.2, sizes.size)))
    assert fit.ci_low < fit.slope < fit.ci_high
    assert fit.ci_low < 1 < fit.ci_high


def test_fit_slope_needs_two_points():
    with pytest.raises(ConfigError):
        fit_slope([10], [1.0])


def test_run_bench_rejects_short_grids_and_bad_axes():
    with pytest.raises(ConfigError):
        run_bench("t", [1, 2, 3], "eig")
    with pytest.raises(ConfigError):
        run_bench("q", [1, 2, 3, 4], "eig")
    with pytest.raises(ConfigError):
        run_suite("missing")


def test_every_suite_has_an_expected_slope():
    for cfg in SUITES.values():
        assert (cfg["engine"], cfg["axis"], cfg["phase"]) in EXPECTED
        assert len(cfg["sizes"]) >= 4


def test_report_passes_if_either_fit_is_in_band():
    good, bad = SlopeFit(1.05, 0, 1, 1.1, 5), SlopeFit(1.4, 0, 1.3, 1.5, 5)
    r = BenchReport("eig", "t", "loop", [1, 2, 3, 4, 5], fit=bad, fit_dropped=good, expected=1, tolerance=0.15)
    assert r.passed
    r.fit_dropped = None
    assert r.passed is False
    r.expected = None
    assert r.passed is None


def test_tiny_run_bench(tmp_path):
    report = run_bench("t", [1, 2, 3, 4], "chol", 1, fixed={"n": 32, "m": 16}, workdir=tmp_path, block_size=8)
    assert len(report.timings) == 4
    assert {"total", "whiten", "loop"} <= set(report.timings[0])
    assert report.fit is not None and report.fit.points == 4
    assert "verdict=" not in report.render()  # no expectation for chol along t
    assert list(tmp_path.iterdir()) == []


def test_compare_jit_rows():
    rows = compare_jit(k=64, w=4, n=24, repetitions=1)
    assert [r["kernel"] for r in rows] == ["bordered", "chol", "trsm"]
    for r in rows:
        assert r["numba_seconds"] > 0 and r["numpy_seconds"] > 0 and r["speedup"] > 0
