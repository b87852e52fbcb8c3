"""Ground-truth references for the threshold estimators.

Closed forms for the k-th power cycle under Bernoulli(1/2), and
enumeration / Monte Carlo oracles giving the true bias, variance and MSE
of an estimator at every grid threshold on arbitrary graphs.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb

import numpy as np

from . import kernels, rng
from .design import DEFAULT_ENUMERATION_CAP, Design, assignment_table, sample_matrix
from .errors import AdaThreshError
from .exposure import ExposureProbabilities, ThresholdGrid, exact_probabilities, level_tables
from .graph import Graph
from .outcomes import OutcomeModel, true_ate


@dataclass(frozen=True)
class ScaleReference:
    """A closed-form value that is only proportional or approximate."""

    value: float
    approximate: bool = True
    label: str = ""


def prop1_bias(k: int, l: int, gamma):
    """Exact HT bias at ``h = l/2k`` on the k-th power cycle at ``p = 1/2``.

    Linear exposure response with slope ``gamma``.  Evaluated in rational
    arithmetic; only even ``l`` is accepted.
    """
    if k < 1:
        raise AdaThreshError("power k must be >= 1")
    if l % 2 or not 0 <= l <= 2 * k:
        raise AdaThreshError(f"l must be even and in [0, {2 * k}], got {l}")
    d = 2 * k
    num = sum((Fraction(r, k) - 1) * comb(d, r) for r in range(l, d + 1))
    den = sum(comb(d, r) for r in range(l, d + 1))
    return gamma * (num / den - 1)


def prop2_var_scale(k: int, h, alpha, beta, gamma, n: int, p: float) -> ScaleReference:
    """Order-of-magnitude HT variance on the k-th power cycle."""
    h = float(h)
    if not 0.0 <= h <= 1.0:
        raise AdaThreshError("h must lie in [0, 1]")
    d = 2 * k
    bracket = (alpha + beta + gamma * d * h) ** 2 + (alpha + beta + gamma * d * (1 - h)) ** 2
    bracket -= 2 * gamma * h * (1 - h) * d
    return ScaleReference(bracket / (n * p ** (d * h)), True, "variance scale")


def prop3_bias(h, gamma, variant: str = "statement") -> ScaleReference:
    """Approximate bias for ``h >= 1/2`` under cluster randomisation.

    ``variant="proof"`` returns the alternative form ``2 gamma (h - 2)``.
    """
    h = float(h)
    if h < 0.5 or h > 1.0:
        raise AdaThreshError("this approximation needs 1/2 <= h <= 1")
    if variant == "statement":
        value = 2.0 * gamma * (h - 1.0)
    elif variant == "proof":
        value = 2.0 * gamma * (h - 2.0)
    else:
        raise AdaThreshError(f"unknown variant {variant!r}")
    return ScaleReference(value, True, f"bias ({variant})")


def prop4_var_scale(d: int, h, beta, gamma, n: int, p: float) -> ScaleReference:
    h = float(h)
    value = (3 * d + 1 - 2 * d * h) * ((beta + gamma * h) ** 2 + (gamma * (1 - h)) ** 2) / (n * p**2)
    return ScaleReference(value, True, "variance scale")


# -- oracle profiles -----------------------------------------------------------

ORACLE_COLUMNS = (
    "method", "family", "h", "mean_estimate", "true_bias", "true_var", "true_mse",
    "rmse_over_ate", "excluded", "h_star",
)


@dataclass
class OracleProfile:
    grid: ThresholdGrid
    mean_estimate: np.ndarray
    bias: np.ndarray
    var: np.ndarray
    mse: np.ndarray
    ate: float
    method: str
    family: str = "HT"
    excluded: np.ndarray | None = None
    mse_se: np.ndarray | None = None
    mean_se: np.ndarray | None = None
    draws: int = 0
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def rmse_over_ate(self) -> np.ndarray:
        return np.sqrt(self.mse) / self.ate if self.ate else np.full(len(self.mse), np.nan)

    @property
    def h_star_index(self) -> int:
        ok = np.flatnonzero(np.isfinite(self.mse))
        if len(ok) == 0:
            raise AdaThreshError("oracle MSE is undefined at every threshold")
        return int(ok[np.argmin(self.mse[ok])])

    @property
    def h_star(self) -> Fraction:
        return self.grid[self.h_star_index]

    def to_rows(self) -> list[dict]:
        star = self.h_star_index
        rows = []
        for g, h in enumerate(self.grid):
            rows.append({
                "method": self.method,
                "family": self.family,
                "h": str(h),
                "mean_estimate": self.mean_estimate[g],
                "true_bias": self.bias[g],
                "true_var": self.var[g],
                "true_mse": self.mse[g],
                "rmse_over_ate": self.rmse_over_ate[g],
                "excluded": 0 if self.excluded is None else self.excluded[g],
                "h_star": int(g == star),
            })
        return rows

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.DictWriter(out, fieldnames=ORACLE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in self.to_rows():
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for k, v in row.items()})
        return out.getvalue()


def _block_estimates(z, g: Graph, model: OutcomeModel, grid, pi1, pi0, units, family):
    """Estimates for a block of assignments, shape ``(rows, G)``; NaN if undefined."""
    t = kernels.treated_counts(np.ascontiguousarray(z), g.indptr, g.indices).astype(np.int64)
    d = g.degrees
    with np.errstate(divide="ignore", invalid="ignore"):
        y = model.potential(z, t / d)
    table1, table0 = level_tables(g.d_max, grid)
    zz = z[:, units]
    tt = t[:, units]
    du = d[units]
    yy = y[:, units]
    lvl = np.where(zz == 1, table1[du, tt], table0[du, tt])
    n = len(units)
    out = np.full((len(z), len(grid)), np.nan)
    for k in range(len(grid)):
        f1 = (zz == 1) & (lvl >= k)
        f0 = (zz == 0) & (lvl >= k)
        if family == "HT":
            p1, p0 = pi1[:, k], pi0[:, k]
            if np.any(~(p1 > 0)) or np.any(~(p0 > 0)):
                continue
            out[:, k] = (np.sum(np.where(f1, yy / p1, 0.0), axis=1)
                         - np.sum(np.where(f0, yy / p0, 0.0), axis=1)) / n
        else:
            c1, c0 = f1.sum(axis=1), f0.sum(axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                m1 = np.sum(np.where(f1, yy, 0.0), axis=1) / c1
                m0 = np.sum(np.where(f0, yy, 0.0), axis=1) / c0
            out[:, k] = np.where((c1 > 0) & (c0 > 0), m1 - m0, np.nan)
    return out


def _unit_set(g: Graph, units):
    units = np.arange(g.n) if units is None else np.asarray(units, dtype=np.int64)
    if np.any(g.degrees[units] == 0):
        raise AdaThreshError("the estimation set contains isolated nodes")
    return units


def exact_mse(g: Graph, design: Design, model: OutcomeModel, probs: ExposureProbabilities | None = None,
              grid: ThresholdGrid | None = None, family: str = "HT", units=None,
              cap: int = DEFAULT_ENUMERATION_CAP) -> OracleProfile:
    """True bias, variance and MSE by weighting every assignment.

    Assignments where the estimator is undefined (an empty arm for DiM)
    are dropped and the remaining weights renormalised; the dropped mass
    is reported in ``excluded``.
    """
    grid = grid or (probs.grid if probs is not None else ThresholdGrid.for_graph(g))
    units = _unit_set(g, units)
    if family == "HT" and probs is None:
        probs = exact_probabilities(g, design, grid, joints=False, cap=cap)
    z, w = assignment_table(design, g, cap)
    pi1 = probs.marginal1[units] if probs is not None else None
    pi0 = probs.marginal0[units] if probs is not None else None
    G = len(grid)
    s0 = np.zeros(G)
    s1 = np.zeros(G)
    s2 = np.zeros(G)
    step = max(1, 2_000_000 // max(1, g.n))
    for lo in range(0, len(z), step):
        est = _block_estimates(z[lo:lo + step], g, model, grid, pi1, pi0, units, family)
        ww = w[lo:lo + step, None]
        ok = np.isfinite(est)
        s0 += np.sum(np.where(ok, ww, 0.0), axis=0)
        s1 += np.sum(np.where(ok, ww * est, 0.0), axis=0)
        s2 += np.sum(np.where(ok, ww * est**2, 0.0), axis=0)
    tau = true_ate(model)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(s0 > 0, s1 / s0, np.nan)
        var = np.maximum(s2 / s0 - mean**2, 0.0)
    bias = mean - tau
    return OracleProfile(grid, mean, bias, var, bias**2 + var, tau, "enumeration", family,
                         excluded=np.maximum(1.0 - s0, 0.0))


def mc_mse(g: Graph, design: Design, model: OutcomeModel, probs: ExposureProbabilities | None,
           grid: ThresholdGrid | None = None, draws: int = 1000, seed: int = 0, family: str = "HT",
           units=None) -> OracleProfile:
    """Empirical bias, variance (ddof 0) and MSE over ``draws`` fresh assignments."""
    if draws < 2:
        raise AdaThreshError("the Monte Carlo oracle needs at least two draws")
    grid = grid or probs.grid
    units = _unit_set(g, units)
    if family == "HT" and probs is None:
        raise AdaThreshError("the HT oracle needs an exposure-probability table")
    pi1 = probs.marginal1[units] if probs is not None else None
    pi0 = probs.marginal0[units] if probs is not None else None
    stream = rng.derive_seed(seed, rng.ORACLE)
    step = max(1, 2_000_000 // max(1, g.n))
    parts = []
    for lo in range(0, draws, step):
        z = sample_matrix(design, g, stream, np.arange(lo, min(draws, lo + step)))
        parts.append(_block_estimates(z, g, model, grid, pi1, pi0, units, family))
    est = np.concatenate(parts)
    tau = true_ate(model)
    ok = np.isfinite(est)
    count = ok.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.sum(np.where(ok, est, 0.0), axis=0) / count
        dev = np.where(ok, est - mean, 0.0)
        var = np.sum(dev**2, axis=0) / count
        sq = np.where(ok, (est - tau) ** 2, 0.0)
        sq_mean = np.sum(sq, axis=0) / count
        mse_se = np.sqrt(np.sum(np.where(ok, (sq - sq_mean) ** 2, 0.0), axis=0) / count) / np.sqrt(count)
        mean_se = np.sqrt(var / count)
    bias = mean - tau
    return OracleProfile(grid, mean, bias, var, bias**2 + var, tau, f"monte-carlo(R={draws}, seed={seed})",
                         family, excluded=draws - count, mse_se=mse_se, mean_se=mean_se,
                         draws=draws, seed=seed)
