"""Compare the compiled and pure-python QZ kernels on random pencils.

Usage:
    python3 benchmarks/bench_qz.py [--sizes 8,16,32,64] [--repeats 5] [--seed 0]

Prints one row per size with the median wall time of each backend, the
speedup, and the worst relative eigenvalue disagreement between the two
(after optimal matching), which should sit at round-off level.
"""

import argparse
import time

import numpy as np

from pencilguard import backend
from pencilguard.oracles import match_eigenvalues


def run_backend(mod, m1, m2, max_sweeps, tol=1e-12):
    n = m1.shape[0]
    h = m1.copy()
    t = m2.copy()
    q = np.eye(n, dtype=np.complex128)
    z = np.eye(n, dtype=np.complex128)
    mod.hessenberg_triangular(h, t, q, z)
    sweeps, info = mod.qz_iterate(h, t, q, z, max_sweeps, tol)
    if info:
        raise RuntimeError(f"benchmark pencil failed to converge (block {info})")
    return h.diagonal() / t.diagonal()


def median_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="8,16,32,64")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    mods = backend.available_backends()
    rng = np.random.default_rng(args.seed)
    print(f"available backends: {', '.join(sorted(mods))}")
    header = f"{'n':>4}  " + "".join(f"{name + ' (ms)':>14}" for name in sorted(mods))
    if len(mods) == 2:
        header += f"{'speedup':>10}{'eig agree':>12}"
    print(header)

    for size in (int(s) for s in args.sizes.split(",")):
        m1 = rng.standard_normal((size, size)) + 0j
        m2 = rng.standard_normal((size, size)) + 0j
        row = f"{size:>4}  "
        results = {}
        times = {}
        for name in sorted(mods):
            mod = mods[name]
            results[name] = run_backend(mod, m1, m2, 30 * size)
            times[name] = median_time(
                lambda m=mod: run_backend(m, m1, m2, 30 * size), args.repeats
            )
            row += f"{times[name] * 1e3:>14.2f}"
        if len(mods) == 2:
            ratio = times["python"] / times["cython"]
            a, b = results["python"], results["cython"]
            perm = match_eigenvalues(a, b)
            agree = float(np.max(np.abs(a - b[perm]) / (1 + np.abs(a))))
            row += f"{ratio:>9.1f}x{agree:>12.2e}"
        print(row)


if __name__ == "__main__":
    main()
