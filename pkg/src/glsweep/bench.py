"""Timing regressions for the cost model of each engine.

A suite varies one size axis over geometrically spaced points, times the
engine (median of repetitions, monotonic clock) and fits
``log(time) = a + slope * log(size)``.
"""

from __future__ import annotations

import math
import shutil
import statistics
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats as sps

from .chol import sweep_chol
from .datagen import ScenarioSpec, gen_scenario
from .eig import sweep_eig
from .errors import ConfigError
from .kernels import get_backend
from .naive import sweep_naive
from .sweep import SKIP_AND_LOG, serial_kernels

MIN_POINTS = 4

#: (engine, axis, phase) -> (expected slope, absolute tolerance)
EXPECTED = {
    ("naive", "n", "total"): (3.0, 0.3),
    ("chol", "m", "total"): (1.0, 0.15),
    ("chol", "n", "whiten"): (2.0, 0.3),
    ("eig", "t", "loop"): (1.0, 0.15),
    ("eig", "n", "loop"): (1.0, 0.3),
}

# The n-axis suites time the textbook kernels: their cost per flop is flat
# across sizes, whereas LAPACK/BLAS efficiency keeps rising with n at desk
# scale and bends the fitted slope below the operation count. Short suites
# take more repetitions so the median settles on a noisy single-core host.
SUITES = {
    "naive-n": {"engine": "naive", "axis": "n", "phase": "total", "backend": "reference",
                "sizes": [707, 1000, 1414, 2000, 2828], "fixed": {"m": 2, "t": 1, "c": 2}},
    "chol-m": {"engine": "chol", "axis": "m", "phase": "total", "backend": "optimized",
               "sizes": [4096, 8192, 16384, 32768, 65536], "fixed": {"n": 512, "t": 1, "c": 2}, "reps": 5},
    "chol-n": {"engine": "chol", "axis": "n", "phase": "whiten", "backend": "reference",
               "sizes": [500, 707, 1000, 1414, 2000, 2828], "fixed": {"m": 512, "t": 1, "c": 2}},
    "eig-t": {"engine": "eig", "axis": "t", "phase": "loop", "backend": "optimized",
              "sizes": [8, 16, 32, 64, 128], "fixed": {"n": 256, "m": 2048, "c": 2}},
    "eig-n": {"engine": "eig", "axis": "n", "phase": "loop", "backend": "optimized",
              "sizes": [256, 512, 1024, 2048, 4096], "fixed": {"m": 2048, "t": 2, "c": 2}},
}


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    ci_low: float
    ci_high: float
    points: int


def fit_slope(sizes, seconds, confidence=0.95) -> SlopeFit:
    """Least-squares slope of log(seconds) against log(size) with a t-based CI."""
    x = np.log(np.asarray(sizes, dtype=float))
    y = np.log(np.asarray(seconds, dtype=float))
    if x.size < 2:
        raise ConfigError("need at least two points for a slope")
    res = sps.linregress(x, y)
    if x.size > 2:
        half = sps.t.ppf(0.5 + confidence / 2, x.size - 2) * res.stderr
    else:
        half = float("inf")
    return SlopeFit(res.slope, res.intercept, res.slope - half, res.slope + half, int(x.size))


@dataclass
class BenchReport:
    engine: str
    axis: str
    phase: str
    sizes: list
    backend: str = "optimized"
    timings: list = field(default_factory=list)  # per size: {phase: median seconds}
    fit: SlopeFit | None = None
    fit_dropped: SlopeFit | None = None  # smallest size removed
    expected: float | None = None
    tolerance: float | None = None
    peak_memory: list = field(default_factory=list)
    overlap: list = field(default_factory=list)

    @property
    def passed(self) -> bool | None:
        if self.expected is None or self.fit is None:
            return None
        fits = [self.fit] + ([self.fit_dropped] if self.fit_dropped is not None else [])
        return any(abs(f.slope - self.expected) <= self.tolerance for f in fits)

    def series(self, phase=None):
        phase = phase or self.phase
        return [t[phase] for t in self.timings]

    def render(self) -> str:
        lines = [f"# bench engine={self.engine} axis={self.axis} phase={self.phase} backend={self.backend}"]
        phases = sorted(self.timings[0]) if self.timings else []
        lines.append(f"{self.axis:>8} " + " ".join(f"{p:>12}" for p in phases))
        for s, t in zip(self.sizes, self.timings):
            lines.append(f"{s:>8} " + " ".join(f"{t[p]:>12.6f}" for p in phases))
        for label, f in (("slope", self.fit), ("slope_drop_smallest", self.fit_dropped)):
            if f is not None:
                lines.append(f"{label}={f.slope:.4f} ci95=[{f.ci_low:.4f},{f.ci_high:.4f}] points={f.points}")
        if self.expected is not None:
            verdict = {True: "PASS", False: "FAIL", None: "n/a"}[self.passed]
            lines.append(f"expected={self.expected} tolerance={self.tolerance} verdict={verdict}")
        return "\n".join(lines)


def _run_engine(engine, ds, source, block_size, backend):
    kw = {"block_size": block_size, "backend": backend}
    if engine == "naive":
        return sweep_naive(ds, source, error_policy=SKIP_AND_LOG, **kw)
    if engine == "chol":
        return sweep_chol(ds, list(range(ds.dims.t)), source, **kw)
    if engine == "eig":
        return sweep_eig(ds, source, **kw)
    raise ConfigError(f"unknown engine {engine!r}")


def run_bench(axis, sizes, engine, repetitions=3, *, fixed=None, phase="total", block_size=256, seed=0,
              backend=None, workdir=None, progress=None) -> BenchReport:
    """Time ``engine`` over ``sizes`` of ``axis`` and fit the log-log slope."""
    backend = get_backend(backend)
    if axis not in ("n", "m", "t"):
        raise ConfigError(f"axis must be n, m or t, got {axis!r}")
    sizes = [int(s) for s in sizes]
    if len(sizes) < MIN_POINTS:
        raise ConfigError(f"need at least {MIN_POINTS} sizes, got {len(sizes)}")
    fixed = dict(fixed or {})
    fixed.setdefault("c", 2)
    expected, tol = EXPECTED.get((engine, axis, phase), (None, None))
    report = BenchReport(engine, axis, phase, sizes, expected=expected, tolerance=tol, backend=backend.name)
    root = Path(tempfile.mkdtemp(prefix="glsweep-bench-", dir=workdir))
    try:
        for size in sizes:
            dims = dict(fixed, **{axis: size})
            spec = ScenarioSpec(preset="custom", n=dims["n"], m=dims["m"], t=dims["t"], c=dims["c"], seed=seed)
            folder = root / f"{axis}{size}"
            ds, source = gen_scenario(spec, folder).load()
            runs = []
            with serial_kernels(True):
                _run_engine(engine, ds, source, block_size, backend)  # warm-up (jit, page cache)
                for _ in range(repetitions):
                    t0 = time.perf_counter()
                    summ = _run_engine(engine, ds, source, block_size, backend)
                    wall = time.perf_counter() - t0
                    runs.append(dict(summ.phases, total=wall))
                    report.overlap.append(summ.overlap()["overlap_efficiency"])
            source.close()
            shutil.rmtree(folder, ignore_errors=True)
            med = {p: statistics.median(r.get(p, 0.0) for r in runs) for p in runs[0]}
            report.timings.append(med)
            if progress:
                progress(f"{engine} {axis}={size} {phase}={med.get(phase, float('nan')):.6f}s")
    finally:
        shutil.rmtree(root, ignore_errors=True)
    series = report.series()
    if all(s > 0 for s in series):
        report.fit = fit_slope(sizes, series)
        if len(sizes) - 1 >= MIN_POINTS:
            report.fit_dropped = fit_slope(sizes[1:], series[1:])
    return report


def run_suite(name, repetitions=None, *, sizes=None, fixed=None, backend=None, **kwargs) -> BenchReport:
    """Run a named entry of :data:`SUITES`; keyword overrides replace its settings."""
    if name not in SUITES:
        raise ConfigError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    cfg = SUITES[name]
    return run_bench(
        cfg["axis"],
        sizes or cfg["sizes"],
        cfg["engine"],
        repetitions or cfg.get("reps", 3),
        fixed=dict(cfg["fixed"], **(fixed or {})),
        phase=cfg["phase"],
        backend=backend or cfg["backend"],
        **kwargs,
    )


# -- jit versus numpy -----------------------------------------------------------------


def compare_jit(k=4096, w=4, n=192, repetitions=5, seed=0) -> list[dict]:
    """Time the numba and numpy paths of the hot kernels side by side."""
    from .kernels import bordered, reference

    rng = np.random.default_rng(seed)
    q = w - 1
    a = rng.standard_normal((n, q))
    s_tl = a.T @ a
    g = rng.standard_normal((n, k))
    border = g.T @ a
    corner = np.einsum("ij,ij->j", g, g)
    rhs = rng.standard_normal(k)
    b_t = rng.standard_normal(q)
    spd = rng.standard_normal((n, n))
    spd = spd @ spd.T + n * np.eye(n)
    rows = []

    def timeit(fn):
        fn()
        ts = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            fn()
            ts.append(time.perf_counter() - t0)
        return statistics.median(ts)

    cases = {
        "bordered": lambda impl: (lambda: bordered.solve_bordered(s_tl, b_t, border, corner, rhs, 1.0, impl=impl)),
        "chol": lambda impl: (lambda: reference.ReferenceBackend(impl).chol_factor(spd)),
        "trsm": lambda impl: (lambda: reference.ReferenceBackend(impl).tri_solve_left(lo, g[:, :32])),
    }
    lo = np.linalg.cholesky(spd)
    for name, make in cases.items():
        t_nb = timeit(make("numba"))
        t_np = timeit(make("numpy"))
        rows.append({"kernel": name, "numba_seconds": t_nb, "numpy_seconds": t_np,
                     "speedup": t_np / t_nb if t_nb > 0 else math.inf})
    return rows
