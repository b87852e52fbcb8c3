"""Exposure fractions and exposure probabilities on a threshold grid.

A unit ``i`` is *treatment-exposed* at threshold ``h`` when ``z_i = 1`` and
``e_i >= h`` and *control-exposed* when ``z_i = 0`` and ``e_i <= 1 - h``,
where ``e_i = t_i / d_i`` is the fraction of treated neighbours.  All such
comparisons are done on integers (``t * den >= num * d``) so that grid
points like 1/3 never misclassify.

Probabilities are stored per grid index.  Every unit gets an integer
*level* per draw: the largest grid index at which it is exposed to its own
arm.  Exposure at index ``g`` is then ``level >= g`` and all tables are suffix
sums of level histograms.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from math import ceil, floor
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy import stats

from . import kernels, rng
from .design import DEFAULT_ENUMERATION_CAP, Assignment, Design, assignment_table, sample_matrix
from .errors import AdaThreshError, IsolatedNodeError
from .graph import Graph

log = logging.getLogger(__name__)

CACHE_FORMAT_VERSION = 1
#: slot order of the joint tables
JOINT_SLOTS = ("11", "00", "10", "01")


class ThresholdGrid:
    """Strictly increasing exact thresholds in [0, 1] containing 0 and 1."""

    def __init__(self, values):
        fr = tuple(Fraction(v) for v in values)
        if not fr or fr[0] != 0 or fr[-1] != 1:
            raise AdaThreshError("threshold grid must start at 0 and end at 1")
        if any(b <= a for a, b in zip(fr, fr[1:])):
            raise AdaThreshError("threshold grid must be strictly increasing")
        self.values = fr
        self.num = np.array([f.numerator for f in fr], dtype=np.int64)
        self.den = np.array([f.denominator for f in fr], dtype=np.int64)

    @classmethod
    def uniform(cls, denominator: int) -> "ThresholdGrid":
        if denominator < 1:
            raise AdaThreshError("grid denominator must be >= 1")
        return cls(Fraction(u, denominator) for u in range(denominator + 1))

    @classmethod
    def for_graph(cls, g: Graph, units=None) -> "ThresholdGrid":
        """``{u/d}`` for a d-regular graph, tenths otherwise."""
        deg = g.degrees if units is None else g.degrees[np.asarray(units)]
        if len(deg) and deg[0] > 0 and np.all(deg == deg[0]):
            return cls.uniform(int(deg[0]))
        return cls.uniform(10)

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def __getitem__(self, k):
        return self.values[k]

    def __eq__(self, other):
        return isinstance(other, ThresholdGrid) and self.values == other.values

    def __repr__(self):
        return f"ThresholdGrid({[str(v) for v in self.values]})"

    def index(self, h) -> int:
        h = Fraction(h)
        try:
            return self.values.index(h)
        except ValueError:
            raise AdaThreshError(f"threshold {h} is not on the grid {self}") from None

    def as_float(self) -> np.ndarray:
        return self.num / self.den

    def to_list(self) -> list[str]:
        return [str(v) for v in self.values]


def level_tables(d_max: int, grid: ThresholdGrid):
    """Exposure-level lookup tables indexed ``[degree, treated count]``.

    ``table1[d, t]`` is the largest grid index ``g`` with ``t/d >= h_g``;
    ``table0[d, t]`` the largest with ``t/d <= 1 - h_g``.  Degree-0 rows and
    impossible ``t > d`` entries hold -1 (never exposed).
    """
    size = d_max + 1
    d = np.arange(size, dtype=np.int64)[:, None, None]
    t = np.arange(size, dtype=np.int64)[None, :, None]
    num, den = grid.num[None, None, :], grid.den[None, None, :]
    ok = t <= d
    hit1 = (t * den >= num * d) & ok
    hit0 = ((d - t) * den >= num * d) & ok
    table1 = (hit1.sum(axis=2) - 1).astype(np.int32)
    table0 = (hit0.sum(axis=2) - 1).astype(np.int32)
    table1[0, :] = -1
    table0[0, :] = -1
    table1[~ok[:, :, 0]] = -1
    table0[~ok[:, :, 0]] = -1
    return np.ascontiguousarray(table1), np.ascontiguousarray(table0)


@dataclass(frozen=True, eq=False)
class ExposureProfile:
    """Treated-neighbour counts ``t`` and degrees ``d``; ``e = t/d`` exactly."""

    t: np.ndarray
    d: np.ndarray

    @property
    def e(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.t / self.d

    def fraction(self, i: int) -> Fraction:
        return Fraction(int(self.t[i]), int(self.d[i]))

    def at_least(self, h) -> np.ndarray:
        h = Fraction(h)
        return (self.d > 0) & (self.t * h.denominator >= h.numerator * self.d)

    def at_most(self, h) -> np.ndarray:
        h = Fraction(h)
        return (self.d > 0) & (self.t * h.denominator <= h.numerator * self.d)

    def levels(self, z, grid: ThresholdGrid) -> np.ndarray:
        """Own-arm exposure level of every unit for assignment ``z``."""
        table1, table0 = level_tables(int(self.d.max(initial=0)), grid)
        return np.where(np.asarray(z) == 1, table1[self.d, self.t], table0[self.d, self.t])


def exposure_fractions(g: Graph, a, isolated: str = "reject") -> ExposureProfile:
    z = np.ascontiguousarray(getattr(a, "z", a), dtype=np.uint8)
    if isolated not in ("reject", "drop"):
        raise AdaThreshError(f"unknown isolated-node policy {isolated!r}")
    if isolated == "reject":
        bad = np.flatnonzero(g.degrees == 0)
        if len(bad):
            raise IsolatedNodeError(g.label(int(bad[0])))
    t = kernels.treated_counts(z[None, :], g.indptr, g.indices)[0].astype(np.int64)
    return ExposureProfile(t, np.asarray(g.degrees, dtype=np.int64))


@dataclass(eq=False)
class ExposureProbabilities:
    """Exposure probabilities for every node and grid index.

    ``marginal1[i, g] = P(z_i = 1, e_i >= h_g)`` and ``marginal0[i, g] =
    P(z_i = 0, e_i <= 1 - h_g)``.  ``joint[p, s, g]`` holds the pairwise
    probabilities of the dependent pair ``pairs[p] = (i, j)`` (``i < j``) in
    slot ``s`` of :data:`JOINT_SLOTS`.  Pairs not listed are independent and
    their joints are products of marginals.  ``draws == 0`` means exact.
    """

    grid: ThresholdGrid
    marginal1: np.ndarray
    marginal0: np.ndarray
    pairs: np.ndarray = field(default_factory=lambda: np.empty((0, 2), dtype=np.int64))
    joint: np.ndarray | None = None
    draws: int = 0
    source: str = "exact"
    key: dict = field(default_factory=dict)
    _pair_lookup: dict | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.marginal1.shape[0]

    @property
    def has_joints(self) -> bool:
        return self.joint is not None

    def marginals_at(self, h):
        g = self.grid.index(h)
        return self.marginal1[:, g], self.marginal0[:, g]

    def pair_position(self, i: int, j: int) -> int:
        if self._pair_lookup is None:
            self._pair_lookup = {(int(a), int(b)): k for k, (a, b) in enumerate(self.pairs)}
        return self._pair_lookup.get((min(i, j), max(i, j)), -1)

    def joint_value(self, i: int, j: int, kind: str, h) -> float:
        """``P(unit i in arm kind[0] exposure, unit j in arm kind[1] exposure)``."""
        g = self.grid.index(h)
        if i == j:
            raise AdaThreshError("joint probabilities are defined for i != j")
        if i > j:
            i, j = j, i
            kind = kind[::-1]
        k = self.pair_position(i, j)
        if k < 0:
            m = {"1": self.marginal1, "0": self.marginal0}
            return float(m[kind[0]][i, g] * m[kind[1]][j, g])
        return float(self.joint[k, JOINT_SLOTS.index(kind), g])

    def zero_cells(self) -> int:
        return 0 if self.joint is None else int(np.count_nonzero(self.joint == 0))

    # -- persistence -------------------------------------------------------
    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {
            "version": CACHE_FORMAT_VERSION,
            "grid": self.grid.to_list(),
            "draws": self.draws,
            "source": self.source,
            "key": self.key,
        }
        arrays = {"marginal1": self.marginal1, "marginal0": self.marginal0, "pairs": self.pairs}
        if self.joint is not None:
            arrays["joint"] = self.joint
        with open(path, "wb") as fh:
            np.savez_compressed(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)
        return path

    @classmethod
    def load(cls, path) -> "ExposureProbabilities":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            if meta.get("version") != CACHE_FORMAT_VERSION:
                raise AdaThreshError(f"unsupported cache format version {meta.get('version')}")
            return cls(
                grid=ThresholdGrid(Fraction(v) for v in meta["grid"]),
                marginal1=data["marginal1"],
                marginal0=data["marginal0"],
                pairs=data["pairs"],
                joint=data["joint"] if "joint" in data else None,
                draws=meta["draws"],
                source=meta["source"],
                key=meta["key"],
            )


def exact_unit_marginals(g: Graph, p: float, grid: ThresholdGrid) -> ExposureProbabilities:
    """Binomial-tail marginals under unit-level Bernoulli(p)."""
    n, G = g.n, len(grid)
    m1 = np.full((n, G), np.nan)
    m0 = np.full((n, G), np.nan)
    for d in np.unique(g.degrees):
        d = int(d)
        if d == 0:
            continue
        rows = g.degrees == d
        for k, h in enumerate(grid):
            lo = ceil(h * d)           # t >= h d
            hi = floor((1 - h) * d)    # t <= (1-h) d
            tail1 = stats.binom.sf(lo - 1, d, p)
            tail0 = stats.binom.cdf(hi, d, p)
            m1[rows, k] = p * tail1
            m0[rows, k] = (1.0 - p) * tail0
    return ExposureProbabilities(grid, m1, m0, draws=0, source="exact-marginals")


def dependency_sets(g: Graph, design: Design) -> sp.csr_matrix:
    """Boolean incidence of node -> coins its exposure state depends on."""
    coin = design.coin_of(g)
    src = np.concatenate([np.arange(g.n), np.repeat(np.arange(g.n), g.degrees)])
    dst = np.concatenate([coin, coin[g.indices]])
    m = sp.csr_matrix(
        (np.ones(len(src), dtype=np.int64), (src, dst)), shape=(g.n, design.num_coins(g))
    )
    m.sum_duplicates()
    m.data[:] = 1
    return m


def dependent_pairs(g: Graph, design: Design, units=None) -> np.ndarray:
    """Pairs ``(i, j)``, ``i < j``, whose exposure states are dependent.

    Two units are dependent when the coins deciding their own treatment and
    their neighbours' treatments overlap.  Under a unit design this is graph
    distance <= 2.  Under a cluster design pairs in the same or in adjacent
    clusters, and pairs within distance 2, are listed as well; the extra
    ones are independent and only cost table space.  Restricting to
    ``units`` keeps pairs with both ends in it.
    """
    m = dependency_sets(g, design)
    links = m @ m.T
    if design.kind == "cluster":
        a = g.to_sparse()
        member = sp.csr_matrix(
            (np.ones(g.n, dtype=np.int64), (np.arange(g.n), design.coin_of(g))),
            shape=(g.n, design.num_coins(g)),
        )
        near = member.T @ a @ member + sp.identity(design.num_coins(g), dtype=np.int64, format="csr")
        ai = a + sp.identity(g.n, dtype=np.int64, format="csr")
        links = links + member @ near @ member.T + ai @ ai
    if units is not None:
        units = np.unique(np.asarray(units, dtype=np.int64))
        keep = sp.diags(np.isin(np.arange(g.n), units).astype(np.int64))
        links = keep @ links @ keep
    co = sp.triu(links, k=1).tocoo()
    sel = co.data > 0
    pairs = np.column_stack([co.row[sel], co.col[sel]]).astype(np.int64)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return np.ascontiguousarray(pairs[order])


def _suffix(counts: np.ndarray) -> np.ndarray:
    return np.flip(np.cumsum(np.flip(counts, axis=-1), axis=-1), axis=-1)


def _chunks(total: int, size: int):
    return [(lo, min(total, lo + size)) for lo in range(0, total, size)]


def mc_probabilities(
    g: Graph,
    design: Design,
    grid: ThresholdGrid,
    draws: int,
    seed: int,
    *,
    units=None,
    joints: bool = True,
    threads: int = 1,
    chunk: int | None = None,
) -> ExposureProbabilities:
    """Monte Carlo exposure probabilities from ``draws`` seeded assignments.

    Marginals cover every node; joints cover the dependent pairs among
    ``units`` (all nodes by default).  Draw ``r`` is the assignment keyed by
    ``(seed, r)``; counts are integers, so any ``threads``/``chunk`` setting
    gives identical tables.
    """
    if draws < 1:
        raise AdaThreshError("need at least one Monte Carlo draw")
    design.check(g)
    G = len(grid)
    stream = rng.derive_seed(seed, rng.MC)
    pairs = dependent_pairs(g, design, units) if joints else np.empty((0, 2), dtype=np.int64)
    table1, table0 = level_tables(g.d_max, grid)
    pi = np.ascontiguousarray(pairs[:, 0])
    pj = np.ascontiguousarray(pairs[:, 1])
    if chunk is None:
        chunk = max(1, min(draws, 4_000_000 // max(1, g.n + 4 * len(pairs))))

    def work(bounds):
        lo, hi = bounds
        m1 = np.zeros((g.n, G), dtype=np.int64)
        m0 = np.zeros((g.n, G), dtype=np.int64)
        jt = np.zeros((len(pairs), 4, G), dtype=np.int64)
        z = sample_matrix(design, g, stream, np.arange(lo, hi))
        kernels.accumulate_exposure_counts(
            z, g.indptr, g.indices, g.degrees, table1, table0, pi, pj, m1, m0, jt
        )
        return m1, m0, jt

    parts = _chunks(draws, chunk)
    if threads > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, parts))
    else:
        results = [work(b) for b in parts]
    m1 = sum(r[0] for r in results)
    m0 = sum(r[1] for r in results)
    jt = sum(r[2] for r in results)
    probs = ExposureProbabilities(
        grid,
        _suffix(m1) / draws,
        _suffix(m0) / draws,
        pairs=pairs,
        joint=_suffix(jt) / draws if joints else None,
        draws=draws,
        source="monte-carlo",
    )
    _mark_isolated(g, probs)
    log.debug("mc probabilities: %d draws, %d pairs, %d zero joint cells",
              draws, len(pairs), probs.zero_cells())
    return probs


def exact_probabilities(
    g: Graph,
    design: Design,
    grid: ThresholdGrid,
    *,
    units=None,
    joints: bool = True,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> ExposureProbabilities:
    """Exact probabilities by weighted enumeration of every assignment."""
    z, weights = assignment_table(design, g, cap)
    G = len(grid)
    pairs = dependent_pairs(g, design, units) if joints else np.empty((0, 2), dtype=np.int64)
    table1, table0 = level_tables(g.d_max, grid)
    m1 = np.zeros((g.n, G))
    m0 = np.zeros((g.n, G))
    jt = np.zeros((len(pairs), 4, G))
    step = max(1, 4_000_000 // max(1, g.n + 4 * len(pairs)))
    for lo, hi in _chunks(len(z), step):
        kernels.python_backend.accumulate_exposure_counts(
            z[lo:hi], g.indptr, g.indices, g.degrees, table1, table0,
            pairs[:, 0], pairs[:, 1], m1, m0, jt, weights=weights[lo:hi],
        )
    probs = ExposureProbabilities(
        grid, _suffix(m1), _suffix(m0), pairs=pairs,
        joint=_suffix(jt) if joints else None, draws=0, source="exact",
    )
    _mark_isolated(g, probs)
    return probs


def _mark_isolated(g: Graph, probs: ExposureProbabilities):
    iso = g.degrees == 0
    if iso.any():
        probs.marginal1[iso] = np.nan
        probs.marginal0[iso] = np.nan


def probability_key(g: Graph, design: Design, grid: ThresholdGrid, draws: int, seed: int,
                    engine: str, units=None) -> dict:
    import hashlib

    d = design.describe()
    if "clusters" in d:
        d["clusters"] = hashlib.sha256(np.asarray(d["clusters"]).tobytes()).hexdigest()
    key = {
        "graph": g.fingerprint(),
        "design": d,
        "grid": grid.to_list(),
        "draws": draws,
        "seed": seed,
        "engine": engine,
    }
    if units is not None:
        key["units"] = hashlib.sha256(np.asarray(units, dtype=np.int64).tobytes()).hexdigest()
    return key
