"""Interference graphs in compressed adjacency form, and their clusterings."""

from __future__ import annotations

import hashlib
import io
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from . import rng
from .errors import AdaThreshError, ParseError


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable simple undirected graph.

    ``indptr``/``indices`` are CSR arrays with sorted, de-duplicated neighbour
    lists and no self-loops.  ``ids`` holds external node labels when the
    graph was ingested from a file (``ids[k]`` is the label of node ``k``).
    """

    indptr: np.ndarray
    indices: np.ndarray
    ids: tuple | None = None
    self_loops_dropped: int = 0
    degrees: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        indptr.flags.writeable = False
        indices.flags.writeable = False
        degrees = np.diff(indptr)
        degrees.flags.writeable = False
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "degrees", degrees)

    @classmethod
    def from_edges(cls, n: int, edges, ids=None, self_loops_dropped=0) -> "Graph":
        """Build from an iterable or (m, 2) array of node pairs.

        Pairs are symmetrised, duplicates collapse and self-loops are removed.
        """
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise AdaThreshError(f"edge endpoint outside 0..{n - 1}")
        e = e[e[:, 0] != e[:, 1]]
        both = np.concatenate([e, e[:, ::-1]])
        keys = np.unique(both[:, 0] * n + both[:, 1])
        src, dst = np.divmod(keys, n)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
        return cls(indptr, dst, ids=ids, self_loops_dropped=self_loops_dropped)

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    @property
    def d_max(self) -> int:
        return int(self.degrees.max()) if self.n else 0

    @property
    def num_edges(self) -> int:
        return len(self.indices) // 2

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    @property
    def adjacency(self) -> list[list[int]]:
        return [self.neighbors(i).tolist() for i in range(self.n)]

    def is_regular(self) -> bool:
        return self.n > 0 and bool(np.all(self.degrees == self.degrees[0]))

    def edges(self) -> np.ndarray:
        """(m, 2) array of edges with ``u < v``, sorted."""
        src = np.repeat(np.arange(self.n), self.degrees)
        keep = src < self.indices
        return np.column_stack([src[keep], self.indices[keep]])

    def to_sparse(self) -> sp.csr_matrix:
        data = np.ones(len(self.indices), dtype=np.int64)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def ball(self, i: int, r: int) -> np.ndarray:
        """Nodes within ``r`` hops of ``i`` (including ``i``), ascending."""
        seen = {i}
        frontier = [i]
        for _ in range(r):
            nxt = []
            for u in frontier:
                for v in self.neighbors(u).tolist():
                    if v not in seen:
                        seen.add(v)
                        nxt.append(v)
            frontier = nxt
        return np.array(sorted(seen), dtype=np.int64)

    def label(self, i: int):
        return self.ids[i] if self.ids is not None else i

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.int64(self.n).tobytes())
        h.update(self.indptr.tobytes())
        h.update(self.indices.tobytes())
        return h.hexdigest()

    def to_edge_list(self) -> str:
        """SNAP-style text, one ``u<TAB>v`` line per edge, external labels."""
        out = io.StringIO()
        out.write(f"# Nodes: {self.n} Edges: {self.num_edges}\n")
        for u, v in self.edges().tolist():
            out.write(f"{self.label(u)}\t{self.label(v)}\n")
        return out.getvalue()

    def labels(self) -> np.ndarray:
        return np.asarray(self.ids) if self.ids is not None else np.arange(self.n)

    def __eq__(self, other):
        """Same labelled graph: equal label sets and equal labelled edge sets.

        Internal numbering may differ, since re-reading an edge list numbers
        nodes by first appearance.
        """
        if not isinstance(other, Graph):
            return NotImplemented
        if self.n != other.n:
            return False
        la, lb = self.labels(), other.labels()
        if np.array_equal(la, lb):
            return np.array_equal(self.indptr, other.indptr) and np.array_equal(self.indices, other.indices)
        if set(la.tolist()) != set(lb.tolist()):
            return False

        def labelled(g, lab):
            e = g.edges()
            return {frozenset((lab[u], lab[v])) for u, v in e.tolist()}

        return self.num_edges == other.num_edges and labelled(self, la) == labelled(other, lb)

    __hash__ = None


def kth_power_cycle(n: int, k: int) -> Graph:
    """Circulant graph joining every node to its ``2k`` nearest ring neighbours."""
    if k < 1:
        raise AdaThreshError("power k must be >= 1")
    if n <= 2 * k:
        raise AdaThreshError(f"need n > 2k (got n={n}, k={k}); neighbour sets would collide")
    i = np.arange(n)
    edges = np.concatenate([np.column_stack([i, (i + r) % n]) for r in range(1, k + 1)])
    return Graph.from_edges(n, edges)


def sbm(block_sizes: Sequence[int], p_in: float, p_out: float, seed: int) -> Graph:
    """Stochastic block model.

    Each pair ``i < j`` gets an edge iff its counter-based uniform (keyed by
    the pair's row-major index) falls below ``p_in`` or ``p_out``.
    """
    if not 0.0 <= p_out <= p_in <= 1.0:
        raise AdaThreshError("need 0 <= p_out <= p_in <= 1")
    sizes = np.asarray(block_sizes, dtype=np.int64)
    block = np.repeat(np.arange(len(sizes)), sizes)
    n = int(sizes.sum())
    found = []
    rows_per_chunk = max(1, 2_000_000 // max(n, 1))
    for lo in range(0, n, rows_per_chunk):
        i = np.arange(lo, min(n, lo + rows_per_chunk))[:, None]
        j = np.arange(n)[None, :]
        u = rng.counter_uniform(seed, rng.SBM, i * n + j)
        prob = np.where(block[i] == block[j], p_in, p_out)
        hit = (j > i) & (u < prob)
        ii, jj = np.nonzero(hit)
        found.append(np.column_stack([ii + lo, jj]))
    edges = np.concatenate(found) if found else np.empty((0, 2), dtype=np.int64)
    return Graph.from_edges(n, edges)


def sbm_blocks(block_sizes: Sequence[int]) -> np.ndarray:
    return np.repeat(np.arange(len(block_sizes)), block_sizes)


def _tokens(lines: Iterable[str]):
    for lineno, raw in enumerate(lines, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode()
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        yield lineno, line.split()


def _as_lines(text):
    if isinstance(text, str):
        return text.splitlines()
    return text


def from_edge_list(text) -> Graph:
    """Parse a SNAP edge list (string or iterable of lines).

    Node labels are compacted to ``0..n-1`` in order of first appearance
    and kept in ``Graph.ids``.  Reversed and repeated pairs collapse into a
    single undirected edge; self-loop lines are dropped and counted.
    """
    index: dict[int, int] = {}
    pairs = []
    loops = 0
    for lineno, parts in _tokens(_as_lines(text)):
        if len(parts) != 2:
            raise ParseError(f"expected two node ids, got {len(parts)} fields", lineno)
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(f"non-integer node id in {parts!r}", lineno) from None
        a = index.setdefault(u, len(index))
        b = index.setdefault(v, len(index))
        if a == b:
            loops += 1
            continue
        pairs.append((a, b))
    if loops:
        warnings.warn(f"dropped {loops} self-loop line(s)", stacklevel=2)
    return Graph.from_edges(len(index), pairs, ids=tuple(index), self_loops_dropped=loops)


def read_edge_list(path) -> Graph:
    if str(path) == "-":
        import sys

        return from_edge_list(sys.stdin)
    with open(path) as fh:
        return from_edge_list(fh)


def non_isolated_subset(g: Graph) -> np.ndarray:
    return np.flatnonzero(g.degrees >= 1)


def induced_subgraph(g: Graph, nodes) -> Graph:
    """Subgraph on ``nodes`` (relabelled 0..len-1 in the given order)."""
    nodes = np.asarray(nodes, dtype=np.int64)
    pos = np.full(g.n, -1, dtype=np.int64)
    pos[nodes] = np.arange(len(nodes))
    e = g.edges()
    keep = (pos[e[:, 0]] >= 0) & (pos[e[:, 1]] >= 0)
    ids = tuple(g.label(int(i)) for i in nodes)
    return Graph.from_edges(len(nodes), pos[e[keep]], ids=ids)


@dataclass(frozen=True, eq=False)
class Clustering:
    """Partition of the nodes into clusters ``0..K-1``.

    ``s_max`` is one plus the largest number of edges with exactly one
    endpoint in a single cluster.
    """

    cluster_of: np.ndarray
    clusters: tuple
    s_max: int

    @property
    def k(self) -> int:
        return len(self.clusters)

    @classmethod
    def from_labels(cls, g: Graph, labels) -> "Clustering":
        labels = np.asarray(labels)
        if labels.shape != (g.n,):
            raise AdaThreshError(f"need one cluster label per node ({g.n})")
        _, cluster_of = np.unique(labels, return_inverse=True)
        cluster_of = cluster_of.astype(np.int64)
        cluster_of.flags.writeable = False
        order = np.argsort(cluster_of, kind="stable")
        bounds = np.cumsum(np.bincount(cluster_of))[:-1]
        clusters = tuple(np.split(order, bounds))
        return cls(cluster_of, clusters, _s_max(g, cluster_of))


def _s_max(g: Graph, cluster_of: np.ndarray) -> int:
    e = g.edges()
    if len(e) == 0:
        return 1
    cu, cv = cluster_of[e[:, 0]], cluster_of[e[:, 1]]
    cut = cu != cv
    k = int(cluster_of.max()) + 1
    boundary = np.bincount(cu[cut], minlength=k) + np.bincount(cv[cut], minlength=k)
    return int(boundary.max()) + 1


def contiguous_clusters(g: Graph, size: int) -> Clustering:
    """Consecutive blocks ``[j*size, (j+1)*size)`` of ring positions."""
    if size < 1 or g.n % size:
        raise AdaThreshError(f"cluster size {size} does not divide n={g.n}")
    return Clustering.from_labels(g, np.arange(g.n) // size)


def load_clusters(text, g: Graph) -> Clustering:
    """Parse ``node cluster`` lines; node labels are the graph's external ids."""
    lookup = {lab: i for i, lab in enumerate(g.ids)} if g.ids is not None else None
    labels: list = [None] * g.n
    for lineno, parts in _tokens(_as_lines(text)):
        if len(parts) != 2:
            raise ParseError("expected 'node cluster'", lineno)
        try:
            node, cl = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(f"non-integer field in {parts!r}", lineno) from None
        if lookup is not None:
            if node not in lookup:
                raise ParseError(f"unknown node id {node}", lineno)
            node = lookup[node]
        elif not 0 <= node < g.n:
            raise ParseError(f"unknown node id {node}", lineno)
        if labels[node] is not None:
            raise ParseError(f"duplicate node {g.label(node)}", lineno)
        labels[node] = cl
    missing = [g.label(i) for i, c in enumerate(labels) if c is None]
    if missing:
        raise ParseError(f"{len(missing)} node(s) without a cluster, e.g. {missing[:5]}")
    return Clustering.from_labels(g, labels)


def read_clusters(path, g: Graph) -> Clustering:
    with open(path) as fh:
        return load_clusters(fh, g)
