"""Time the compiled and numpy exposure-counting kernels on the same draws.

    python benchmarks/bench_kernels.py --n 1000 --k 2 --draws 20000
"""

import argparse
import time

import numpy as np

from adathresh import kernels
from adathresh.design import Design, sample_matrix
from adathresh.exposure import ThresholdGrid, dependent_pairs, level_tables
from adathresh.graph import kth_power_cycle


def run(backend, z, g, tables, pairs, G):
    m1 = np.zeros((g.n, G), dtype=np.int64)
    m0 = np.zeros_like(m1)
    jt = np.zeros((len(pairs), 4, G), dtype=np.int64)
    t0 = time.perf_counter()
    backend.accumulate_exposure_counts(z, g.indptr, g.indices, g.degrees, *tables,
                                       pairs[:, 0].copy(), pairs[:, 1].copy(), m1, m0, jt)
    return time.perf_counter() - t0, (m1, m0, jt)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--k", type=int, default=2)
    ap.add_argument("--draws", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    g = kth_power_cycle(args.n, args.k)
    design = Design("unit", 0.5)
    grid = ThresholdGrid.for_graph(g)
    tables = level_tables(g.d_max, grid)
    pairs = dependent_pairs(g, design)
    z = sample_matrix(design, g, 7, np.arange(args.draws))
    print(f"graph n={g.n} d={g.d_max} pairs={len(pairs)} draws={args.draws}")

    backends = [("python", kernels.python_backend)]
    if kernels.compiled_backend is not None:
        backends.append(("cython", kernels.compiled_backend))
    else:
        print("compiled extension not built; timing the numpy backend only")
    results = {}
    for name, mod in backends:
        best = min(run(mod, z, g, tables, pairs, len(grid))[0] for _ in range(args.repeat))
        results[name] = run(mod, z, g, tables, pairs, len(grid))[1]
        rate = args.draws * g.n / best / 1e6
        print(f"{name:>7}: {best:8.3f} s  ({rate:7.1f} M node-draws/s)")
    if len(results) == 2:
        same = all(np.array_equal(a, b) for a, b in zip(results["python"], results["cython"]))
        print("identical counts:", same)


if __name__ == "__main__":
    main()
