"""Command-line front end: ``glsweep {datagen,solve,verify,bench}``.

Summaries go to stdout as ``key=value`` lines; diagnostics go to stderr.
Exit codes: 0 success, 1 verification/benchmark failure, 2 configuration,
3 file format, 4 numerical, 5 I/O.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
import tracemalloc
from pathlib import Path

import numpy as np

from . import __version__
from .bundle import BundlePaths, load_bundle
from .errors import ConfigError, FormatError, GlsError
from .kernels import BACKENDS, STATUS_NAMES, get_backend, warm_up
from .results import compare_grids
from .streamio import DEFAULT_BLOCK_SIZE, ResultWriter, read_results
from .sweep import ERROR_POLICIES, FAIL_FAST, SKIP_AND_LOG

EXIT_OK = 0
EXIT_FAIL = 1

log = logging.getLogger("glsweep")


def emit(pairs: dict, stream=None):
    stream = stream or sys.stdout
    for k, v in pairs.items():
        print(f"{k}={v}", file=stream)


def _parse_fixed(items):
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep or key not in ("n", "m", "t", "c"):
            raise ConfigError(f"--fixed expects n=, m=, t= or c=, got {item!r}")
        out[key] = int(val)
    return out


# -- subcommands ----------------------------------------------------------------------


def cmd_datagen(args) -> int:
    from .datagen import ScenarioSpec, gen_scenario

    spec = ScenarioSpec(
        preset=args.preset, n=args.n, m=args.m, t=args.t, c=args.c, scale=args.scale, seed=args.seed, point=args.point
    )
    t0 = time.perf_counter()
    out = gen_scenario(spec, args.out)
    emit({"out": out.folder, **out.sizes, "w": out.sizes["c"] + 2, "seed": args.seed,
          "seconds": round(time.perf_counter() - t0, 3)})
    return EXIT_OK


def _run_engine(args, ds, source, sink):
    engine = args.engine
    traits = args.trait if args.trait else list(range(ds.dims.t))
    for j in traits:
        if not 0 <= j < ds.dims.t:
            raise ConfigError(f"--trait {j} out of range for t={ds.dims.t}")
    policy = args.error_policy or (FAIL_FAST if engine == "naive" else SKIP_AND_LOG)
    common = {"block_size": args.block_size, "backend": get_backend(args.kernel_backend), "error_policy": policy}
    if engine == "naive":
        from .naive import sweep_naive

        return sweep_naive(ds, source, sink, traits=traits, **common)
    if engine == "chol":
        from .chol import sweep_chol

        return sweep_chol(ds, traits, source, sink, workers=args.workers, **common)
    from .eig import sweep_eig

    budget = None if args.rotation_budget is None else int(args.rotation_budget)
    return sweep_eig(
        ds,
        source,
        sink,
        traits=traits,
        workers=args.workers,
        scratch=args.scratch_dir,
        in_memory_rotation=args.in_memory_rotation,
        rotation_budget=budget,
        overwrite_kinship=args.overwrite_kinship,
        **common,
    )


def cmd_solve(args) -> int:
    if args.block_size < 1:
        raise ConfigError("--block-size must be >= 1")
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    paths = BundlePaths.from_dir(
        args.data,
        kinship=args.kinship,
        covariates=args.covariates,
        genotypes=args.genotypes,
        phenotypes=args.phenotypes,
        params=args.params,
    )
    out = Path(args.out)
    if not out.parent.is_dir():
        raise ConfigError(f"output directory does not exist: {out.parent}")
    ds, source = load_bundle(paths)
    traits = args.trait if args.trait else list(range(ds.dims.t))
    if args.trace_memory:
        warm_up(args.kernel_backend)
        tracemalloc.start()
    try:
        with source:
            sink = ResultWriter(out, ds.dims.m, ds.dims.w, traits)
            summary = _run_engine(args, ds, source, sink)
    finally:
        peak = tracemalloc.get_traced_memory()[1] if args.trace_memory else None
        if args.trace_memory:
            tracemalloc.stop()
    kv = {"out": out, "n": ds.dims.n, "m": ds.dims.m, "t": len(traits), "w": ds.dims.w}
    kv.update(summary.as_kv())
    kv["kernel_backend"] = get_backend(args.kernel_backend).name
    if peak is not None:
        kv["peak_traced_bytes"] = peak
    emit(kv)
    for snp, trait, code in summary.failed[:20]:
        log.info("failed snp=%d trait=%d status=%s", snp, trait, STATUS_NAMES.get(code, code))
    return EXIT_OK


def cmd_verify(args) -> int:
    a = read_results(args.file_a)
    b = read_results(args.file_b)
    if (a.header.m, a.header.t, a.header.w) != (b.header.m, b.header.t, b.header.w):
        raise FormatError(
            f"shape mismatch: (m, t, w) = {(a.header.m, a.header.t, a.header.w)} vs "
            f"{(b.header.m, b.header.t, b.header.w)}"
        )
    if not np.array_equal(a.records["trait"], b.records["trait"]):
        raise FormatError("trait sections differ between the two files")
    cmp = compare_grids(
        (a.grid("beta"), a.grid("stderr"), a.grid("status")),
        (b.grid("beta"), b.grid("stderr"), b.grid("status")),
    )
    ok = cmp.max_rel <= args.tolerance
    emit({
        "compared": cmp.compared,
        "max_rel_beta": f"{cmp.max_rel_beta:.3e}",
        "max_rel_stderr": f"{cmp.max_rel_stderr:.3e}",
        "max_rel": f"{cmp.max_rel:.3e}",
        "tolerance": args.tolerance,
        "status_mismatches": cmp.status_mismatches,
        "verdict": "PASS" if ok else "FAIL",
    })
    for trait, snp, sa, sb in cmp.mismatch_examples:
        print(f"status_mismatch snp={snp} trait={trait} a={STATUS_NAMES.get(sa, sa)} b={STATUS_NAMES.get(sb, sb)}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_bench(args) -> int:
    from . import bench

    if args.compare_jit:
        for row in bench.compare_jit():
            emit({f"{row['kernel']}_{k}": (f"{v:.6f}" if isinstance(v, float) else v)
                  for k, v in row.items() if k != "kernel"})
        return EXIT_OK
    progress = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    reports = []
    if args.suite:
        names = list(bench.SUITES) if "all" in args.suite else args.suite
        for name in names:
            reports.append(bench.run_suite(name, args.reps, sizes=args.sizes, fixed=_parse_fixed(args.fixed),
                                           backend=args.kernel_backend, block_size=args.block_size,
                                           progress=progress))
    else:
        if not (args.engine and args.axis and args.sizes):
            raise ConfigError("bench needs --suite, or all of --engine, --axis and --sizes")
        reports.append(bench.run_bench(args.axis, args.sizes, args.engine, args.reps or 3, fixed=_parse_fixed(args.fixed),
                                       phase=args.phase, block_size=args.block_size,
                                       backend=args.kernel_backend, progress=progress))
    for r in reports:
        print(r.render())
    failed = any(r.passed is False for r in reports)
    return EXIT_FAIL if (failed and args.strict) else EXIT_OK


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="glsweep", description="Batched GLS association sweeps.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("datagen", help="write a synthetic dataset bundle")
    d.add_argument("--preset", default="custom", choices=["A", "B", "C", "custom"],
                   help="size grid to draw from (custom needs --n --m --t)")
    d.add_argument("--scale", type=int, default=1, help="divide every preset size by this factor")
    d.add_argument("--point", type=int, default=-1, help="index into the preset's varied axis (default: largest)")
    d.add_argument("--seed", type=int, default=0, help="master RNG seed")
    d.add_argument("--out", required=True, help="output folder")
    for ax, what in (("n", "samples"), ("m", "SNPs"), ("t", "traits"), ("c", "extra covariates")):
        d.add_argument(f"--{ax}", type=int, default=None, help=f"override number of {what}")
    d.set_defaults(func=cmd_datagen)

    s = sub.add_parser("solve", help="run an engine over a dataset bundle")
    s.add_argument("--engine", choices=["naive", "chol", "eig"], default="eig", help="solver (default eig)")
    s.add_argument("--data", help="bundle folder written by datagen")
    for name in ("kinship", "covariates", "genotypes", "phenotypes", "params"):
        s.add_argument(f"--{name}", help=f"path to the {name} file (overrides --data)")
    s.add_argument("--out", required=True, help="result file to write")
    s.add_argument("--block-size", type=int, default=DEFAULT_BLOCK_SIZE, help="SNPs per streamed block")
    s.add_argument("--trait", type=int, action="append", help="trait index to solve (repeatable; default all)")
    s.add_argument("--workers", type=int, default=1, help="block-level worker threads (1 = fully serial)")
    s.add_argument("--kernel-backend", choices=BACKENDS, default=None,
                   help="dense kernels (default from GLSWEEP_KERNEL_BACKEND, else optimized)")
    s.add_argument("--error-policy", choices=ERROR_POLICIES, default=None,
                   help="per-problem failures: abort or record a status (default fail_fast for naive, else skip_and_log)")
    s.add_argument("--scratch-dir", help="folder for the rotated-genotype file (eig)")
    s.add_argument("--in-memory-rotation", action="store_true", help="keep rotated genotypes in RAM (eig)")
    s.add_argument("--rotation-budget", type=float, default=None, help="byte budget for --in-memory-rotation")
    s.add_argument("--overwrite-kinship", action="store_true", help="reuse the kinship buffer for eigenvectors (eig)")
    s.add_argument("--trace-memory", action="store_true", help="report peak traced allocation bytes")
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("verify", help="compare two result files")
    v.add_argument("file_a")
    v.add_argument("file_b", help="reference file; differences are relative to it")
    v.add_argument("--tolerance", type=float, default=1e-8, help="max allowed relative difference")
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="timing regressions against the cost model")
    b.add_argument("--suite", action="append", help="named suite (repeatable) or 'all'")
    b.add_argument("--engine", choices=["naive", "chol", "eig"])
    b.add_argument("--axis", choices=["n", "m", "t"])
    b.add_argument("--phase", default="total", help="phase whose timings are fitted")
    b.add_argument("--sizes", type=int, nargs="+", help="sizes of the varied axis (>= 4)")
    b.add_argument("--fixed", action="append", help="fixed size, e.g. n=512 (repeatable)")
    b.add_argument("--reps", type=int, default=None, help="repetitions per size, median used (default 3, or the suite's own)")
    b.add_argument("--block-size", type=int, default=DEFAULT_BLOCK_SIZE)
    b.add_argument("--kernel-backend", choices=BACKENDS, default=None, help="dense kernels to time")
    b.add_argument("--strict", action="store_true", help="exit 1 if any slope misses its tolerance")
    b.add_argument("--compare-jit", action="store_true", help="time numba against numpy kernels and exit")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except GlsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
