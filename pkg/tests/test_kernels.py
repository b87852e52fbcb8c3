import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adathresh import kernels
from adathresh.design import Design, sample_matrix
from adathresh.exposure import ThresholdGrid, dependent_pairs, level_tables
from adathresh.graph import kth_power_cycle, sbm

needs_ext = pytest.mark.skipif(kernels.compiled_backend is None, reason="extension not built")


def _counts(mod, z, g, grid, pairs):
    G = len(grid)
    m1 = np.zeros((g.n, G), dtype=np.int64)
    m0 = np.zeros_like(m1)
    jt = np.zeros((len(pairs), 4, G), dtype=np.int64)
    t1, t0 = level_tables(g.d_max, grid)
    mod.accumulate_exposure_counts(z, g.indptr, g.indices, g.degrees, t1, t0,
                                   pairs[:, 0].copy(), pairs[:, 1].copy(), m1, m0, jt)
    return m1, m0, jt


def _loop_counts(z, g, grid, pairs):
    """Plain loops: level histograms and pair-slot histograms."""
    G = len(grid)
    m1 = np.zeros((g.n, G), dtype=np.int64)
    m0 = np.zeros_like(m1)
    jt = np.zeros((len(pairs), 4, G), dtype=np.int64)
    vals = list(grid)
    for row in z:
        lvl = []
        for i in range(g.n):
            d = g.degrees[i]
            t = int(row[g.neighbors(i)].sum())
            if row[i]:
                ok = [k for k, h in enumerate(vals) if d and t * h.denominator >= h.numerator * d]
            else:
                ok = [k for k, h in enumerate(vals) if d and (d - t) * h.denominator >= h.numerator * d]
            lvl.append(max(ok) if ok else -1)
            if lvl[-1] >= 0:
                (m1 if row[i] else m0)[i, lvl[-1]] += 1
        for p, (i, j) in enumerate(pairs):
            lo = min(lvl[i], lvl[j])
            if lo >= 0:
                slot = {(1, 1): 0, (0, 0): 1, (1, 0): 2, (0, 1): 3}[(int(row[i]), int(row[j]))]
                jt[p, slot, lo] += 1
    return m1, m0, jt


def test_python_backend_matches_loops():
    g = sbm([6, 6], 0.5, 0.2, seed=2)
    grid = ThresholdGrid.uniform(4)
    pairs = dependent_pairs(g, Design("unit", 0.5))
    z = sample_matrix(Design("unit", 0.5), g, 4, np.arange(40))
    for a, b in zip(_counts(kernels.python_backend, z, g, grid, pairs), _loop_counts(z, g, grid, pairs)):
        assert np.array_equal(a, b)


@needs_ext
@given(st.integers(0, 2**32), st.integers(1, 3), st.integers(1, 60))
def test_backends_identical(seed, k, draws):
    g = kth_power_cycle(4 * k + 3, k)
    grid = ThresholdGrid.for_graph(g)
    d = Design("unit", 0.5)
    pairs = dependent_pairs(g, d)
    z = sample_matrix(d, g, seed, np.arange(draws))
    for a, b in zip(_counts(kernels.python_backend, z, g, grid, pairs),
                    _counts(kernels.compiled_backend, z, g, grid, pairs)):
        assert np.array_equal(a, b)


@needs_ext
def test_backends_identical_irregular():
    g = sbm([7, 9, 5], 0.6, 0.1, seed=8)
    grid = ThresholdGrid.uniform(10)
    d = Design("unit", 0.4)
    pairs = dependent_pairs(g, d)
    z = sample_matrix(d, g, 1, np.arange(300))
    for a, b in zip(_counts(kernels.python_backend, z, g, grid, pairs),
                    _counts(kernels.compiled_backend, z, g, grid, pairs)):
        assert np.array_equal(a, b)


@needs_ext
def test_treated_counts_identical():
    g = sbm([10, 10], 0.5, 0.1, seed=5)
    z = sample_matrix(Design("unit", 0.5), g, 3, np.arange(25))
    a = kernels.python_backend.treated_counts(z, g.indptr, g.indices)
    b = kernels.compiled_backend.treated_counts(z, g.indptr, g.indices)
    assert np.array_equal(np.asarray(a), np.asarray(b))


def test_backend_flag():
    assert kernels.BACKEND in ("cython", "python")


def test_pure_python_switch():
    import os
    import subprocess
    import sys

    env = dict(os.environ, ADATHRESH_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from adathresh import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
