# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled exposure-counting kernels (see ``_kernels_py`` for the contract)."""

import numpy as np
from libc.stdint cimport int32_t, int64_t, uint8_t


def treated_counts(const uint8_t[:, ::1] z, const int64_t[::1] indptr,
                   const int64_t[::1] indices):
    cdef Py_ssize_t r, i, k
    cdef Py_ssize_t n_draws = z.shape[0], n = z.shape[1]
    cdef int32_t s
    out = np.empty((n_draws, n), dtype=np.int32)
    cdef int32_t[:, ::1] t = out
    with nogil:
        for r in range(n_draws):
            for i in range(n):
                s = 0
                for k in range(indptr[i], indptr[i + 1]):
                    s += z[r, indices[k]]
                t[r, i] = s
    return out


def accumulate_exposure_counts(
    const uint8_t[:, ::1] z, const int64_t[::1] indptr, const int64_t[::1] indices,
    const int64_t[::1] degrees, const int32_t[:, ::1] table1, const int32_t[:, ::1] table0,
    const int64_t[::1] pair_i, const int64_t[::1] pair_j,
    int64_t[:, ::1] marg1, int64_t[:, ::1] marg0, int64_t[:, :, ::1] joint,
    weights=None,
):
    if weights is not None:
        raise TypeError("the compiled kernel counts unweighted draws only")
    cdef Py_ssize_t r, i, k, p, a, b
    cdef Py_ssize_t n_draws = z.shape[0], n = z.shape[1], n_pairs = pair_i.shape[0]
    cdef int32_t s, la, lb, m
    cdef int slot
    lvl_buf = np.empty(n, dtype=np.int32)
    cdef int32_t[::1] lvl = lvl_buf
    with nogil:
        for r in range(n_draws):
            for i in range(n):
                s = 0
                for k in range(indptr[i], indptr[i + 1]):
                    s += z[r, indices[k]]
                if z[r, i]:
                    lvl[i] = table1[degrees[i], s]
                    if lvl[i] >= 0:
                        marg1[i, lvl[i]] += 1
                else:
                    lvl[i] = table0[degrees[i], s]
                    if lvl[i] >= 0:
                        marg0[i, lvl[i]] += 1
            for p in range(n_pairs):
                a = pair_i[p]
                b = pair_j[p]
                la = lvl[a]
                lb = lvl[b]
                m = la if la < lb else lb
                if m < 0:
                    continue
                if z[r, a]:
                    slot = 0 if z[r, b] else 2
                else:
                    slot = 3 if z[r, b] else 1
                joint[p, slot, m] += 1
