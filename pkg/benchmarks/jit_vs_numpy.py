"""Time the numba kernels against their pure-numpy fallbacks.

Two views:

* per kernel, in-process (both implementations are importable side by side);
* end to end, one ``glsweep solve`` per setting of ``GLSWEEP_JIT`` in a fresh
  interpreter: ``chol`` on one trait with the reference backend (triangular
  solves dominate) and ``eig`` on all traits with the optimized backend (the
  bordered per-SNP solve dominates). The solve's own ``wall_seconds`` is
  reported, so interpreter start-up and the numba import are excluded;
  loading cached machine code is not.

    python benchmarks/jit_vs_numpy.py [--k 4096] [--n 192] [--sweep-n 512 --sweep-m 8192 --sweep-t 8]
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import tempfile
from pathlib import Path

from glsweep.bench import compare_jit


def kernel_table(args):
    rows = compare_jit(k=args.k, w=4, n=args.n, repetitions=args.reps)
    print(f"{'kernel':<10} {'numba s':>12} {'numpy s':>12} {'speedup':>9}")
    for r in rows:
        print(f"{r['kernel']:<10} {r['numba_seconds']:>12.6f} {r['numpy_seconds']:>12.6f} {r['speedup']:>8.1f}x")


SWEEPS = (("chol", "reference", ["--trait", "0"]), ("eig", "optimized", []))


def run_solve(bundle, out, jit, engine, backend, extra):
    env = dict(os.environ, GLSWEEP_JIT=jit, GLSWEEP_KERNEL_BACKEND=backend)
    cmd = [sys.executable, "-m", "glsweep", "solve", "--engine", engine, "--data", str(bundle), "--out", str(out),
           *extra]
    out = subprocess.run(cmd, env=env, check=True, capture_output=True, text=True).stdout
    summary = dict(line.split("=", 1) for line in out.splitlines() if "=" in line)
    return float(summary["wall_seconds"])


def sweep_table(args):
    print(f"\nsolve wall time, n={args.sweep_n} m={args.sweep_m} t={args.sweep_t}")
    print(f"{'engine/backend':<20} {'JIT=1 s':>9} {'JIT=0 s':>9} {'speedup':>9}")
    with tempfile.TemporaryDirectory(prefix="glsweep-jit-") as tmp:
        tmp = Path(tmp)
        bundle = tmp / "data"
        subprocess.run(
            [sys.executable, "-m", "glsweep", "datagen", "--n", str(args.sweep_n), "--m", str(args.sweep_m),
             "--t", str(args.sweep_t), "--out", str(bundle)],
            check=True, stdout=subprocess.DEVNULL,
        )
        for engine, backend, extra in SWEEPS:
            run_solve(bundle, tmp / "warm.res", "1", engine, backend, extra)  # populate the numba cache
            times = {jit: run_solve(bundle, tmp / f"jit{jit}.res", jit, engine, backend, extra) for jit in ("1", "0")}
            subprocess.run(
                [sys.executable, "-m", "glsweep", "verify", str(tmp / "jit1.res"), str(tmp / "jit0.res"),
                 "--tolerance", "1e-10"],
                check=True, stdout=subprocess.DEVNULL,
            )
            print(f"{engine + '/' + backend:<20} {times['1']:>9.2f} {times['0']:>9.2f} "
                  f"{times['0'] / times['1']:>8.1f}x")
    print("results of the two paths agree to 1e-10 in every case")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--k", type=int, default=4096, help="SNPs per block for the bordered kernel")
    p.add_argument("--n", type=int, default=192, help="matrix order for chol and trsm")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--sweep-n", type=int, default=512)
    p.add_argument("--sweep-m", type=int, default=8192)
    p.add_argument("--sweep-t", type=int, default=8)
    p.add_argument("--skip-sweep", action="store_true")
    args = p.parse_args()
    kernel_table(args)
    if not args.skip_sweep:
        sweep_table(args)


if __name__ == "__main__":
    main()
