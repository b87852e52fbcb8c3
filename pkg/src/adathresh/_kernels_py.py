"""Pure numpy implementations of the exposure-counting kernels.

Behaviour is identical to the compiled ``_kernels`` module; all outputs are
integer counts (or weighted sums when ``weights`` is given), so the two
backends agree bit for bit.

Pair slots in the joint table are ordered 11, 00, 10, 01, where ``10``
means the first unit of the pair is treated and the second is control.
"""

import numpy as np
import scipy.sparse as sp


def treated_counts(z, indptr, indices):
    """Number of treated neighbours per draw and node, shape ``z.shape``."""
    n = z.shape[1]
    adj = sp.csr_matrix(
        (np.ones(len(indices), dtype=np.int32), indices, indptr), shape=(n, n)
    )
    return np.ascontiguousarray((adj @ z.T.astype(np.int32)).T, dtype=np.int32)


def exposure_levels(z, t, degrees, table1, table0):
    """Highest grid index at which each node is exposed to its own arm (-1: never)."""
    deg = np.broadcast_to(degrees, t.shape)
    return np.where(z == 1, table1[deg, t], table0[deg, t])


def accumulate_exposure_counts(
    z, indptr, indices, degrees, table1, table0, pair_i, pair_j, marg1, marg0, joint,
    weights=None,
):
    """Add level histograms of the draws in ``z`` to the count tables in place.

    ``marg1[i, l]`` counts draws with node ``i`` treated at level exactly
    ``l``; ``joint[p, c, l]`` counts draws of pair ``p`` in slot ``c`` whose
    smaller level is ``l``.  Suffix sums over ``l`` give exposure events.
    """
    n_nodes, g = marg1.shape
    t = treated_counts(z, indptr, indices)
    lvl = exposure_levels(z, t, degrees, table1, table0)
    w = None if weights is None else np.broadcast_to(np.asarray(weights)[:, None], z.shape)

    node = np.broadcast_to(np.arange(n_nodes), z.shape)
    for arm, table in ((1, marg1), (0, marg0)):
        sel = (z == arm) & (lvl >= 0)
        counts = np.bincount(
            node[sel] * g + lvl[sel],
            weights=None if w is None else w[sel],
            minlength=n_nodes * g,
        )
        table += counts.reshape(n_nodes, g).astype(table.dtype)

    n_pairs = len(pair_i)
    if n_pairs == 0:
        return
    zi = z[:, pair_i].astype(np.int64)
    zj = z[:, pair_j].astype(np.int64)
    slot = np.array([1, 3, 2, 0])[2 * zi + zj]  # (zi, zj) -> 11:0, 00:1, 10:2, 01:3
    m = np.minimum(lvl[:, pair_i], lvl[:, pair_j])
    sel = m >= 0
    idx = (np.arange(n_pairs)[None, :] * 4 + slot) * g + m
    counts = np.bincount(
        idx[sel],
        weights=None if w is None else np.broadcast_to(w[:, :1], idx.shape)[sel],
        minlength=n_pairs * 4 * g,
    )
    joint += counts.reshape(n_pairs, 4, g).astype(joint.dtype)
