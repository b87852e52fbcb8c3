"""Bernoulli randomisation designs and reproducible assignment sampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import rng
from .errors import AdaThreshError, EnumerationCapError
from .graph import Clustering, Graph

DEFAULT_ENUMERATION_CAP = 2**22


@dataclass(frozen=True, eq=False)
class Design:
    kind: str = "unit"
    p: float = 0.5
    clustering: Clustering | None = None

    def __post_init__(self):
        if self.kind not in ("unit", "cluster"):
            raise AdaThreshError(f"unknown design kind {self.kind!r}")
        if not 0.0 < self.p < 1.0:
            raise AdaThreshError(f"treatment probability must lie in (0, 1), got {self.p}")
        if (self.kind == "cluster") != (self.clustering is not None):
            raise AdaThreshError("a clustering is required iff the design is cluster-level")

    def num_coins(self, g: Graph) -> int:
        if self.kind == "unit":
            return g.n
        return self.clustering.k

    def coin_of(self, g: Graph) -> np.ndarray:
        """Index of the coin deciding each node's treatment."""
        if self.kind == "unit":
            return np.arange(g.n)
        return np.asarray(self.clustering.cluster_of)

    def check(self, g: Graph):
        if self.kind == "cluster" and len(self.clustering.cluster_of) != g.n:
            raise AdaThreshError("clustering does not cover the graph")

    def describe(self) -> dict:
        d = {"kind": self.kind, "p": self.p}
        if self.clustering is not None:
            d["clusters"] = self.clustering.cluster_of.tolist()
        return d


@dataclass(frozen=True, eq=False)
class Assignment:
    z: np.ndarray
    design: Design
    seed: int
    replicate: int


def sample_matrix(design: Design, g: Graph, seed: int, replicates) -> np.ndarray:
    """Treatment matrix of shape ``(len(replicates), n)``, dtype uint8.

    Row ``r`` depends only on ``(seed, replicates[r])``.
    """
    reps = np.asarray(replicates, dtype=np.int64).reshape(-1, 1)
    coins = np.arange(design.num_coins(g), dtype=np.int64).reshape(1, -1)
    flips = (rng.counter_uniform(seed, rng.ASSIGN, reps, coins) < design.p).astype(np.uint8)
    if design.kind == "unit":
        return flips
    return np.ascontiguousarray(flips[:, design.coin_of(g)])


def sample_assignment(design: Design, g: Graph, seed: int, replicate: int = 0) -> Assignment:
    design.check(g)
    z = sample_matrix(design, g, seed, [replicate])[0]
    z.flags.writeable = False
    return Assignment(z, design, seed, replicate)


def assignment_table(design: Design, g: Graph, cap: int = DEFAULT_ENUMERATION_CAP):
    """All assignments as a ``(2**m, n)`` uint8 matrix plus their probabilities."""
    design.check(g)
    m = design.num_coins(g)
    if 2**m > cap:
        raise EnumerationCapError(m, cap)
    codes = np.arange(2**m, dtype=np.int64)
    flips = np.empty((2**m, m), dtype=np.uint8)
    for b in range(m):
        flips[:, b] = (codes >> b) & 1
    t = flips.sum(axis=1)
    probs = design.p**t * (1.0 - design.p) ** (m - t)
    z = flips if design.kind == "unit" else np.ascontiguousarray(flips[:, design.coin_of(g)])
    return z, probs


def enumerate_assignments(
    design: Design, g: Graph, cap: int = DEFAULT_ENUMERATION_CAP
) -> Iterator[tuple[np.ndarray, float]]:
    """Yield every assignment with its exact probability ``p^t (1-p)^(m-t)``."""
    z, probs = assignment_table(design, g, cap)
    for row, pr in zip(z, probs):
        yield row, float(pr)
