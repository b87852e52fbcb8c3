"""Threshold-indexed ATE estimators and the MSE-minimising threshold selector.

Two estimator families are supported, Horvitz-Thompson (``"HT"``) and
difference-in-means (``"DiM"``).  For each threshold ``h`` on the grid the
profile holds the estimate, a regression-based bias signal, a variance
estimate, and their combination ``bias**2 + var``; the adaptive rule
picks the grid point minimising it.

Every function accepts an optional ``units`` array restricting the
estimation set; ``n`` in all normalisations is the size of that set.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import (
    AdaThreshError,
    DegenerateFitError,
    EmptyArmError,
    IsolatedNodeError,
    NoFeasibleThresholdError,
    PositivityError,
    VarianceInconsistencyError,
)
from .exposure import ExposureProbabilities, ExposureProfile, ThresholdGrid, level_tables

FAMILIES = ("HT", "DiM")
BIAS_MODES = ("global", "local")
RULES = ("fixed-0", "fixed-1", "adaptive", "lepski")
PROFILE_COLUMNS = (
    "replicate", "family", "rule", "h", "tau_hat", "bias_hat", "var_hat", "mse_hat", "selected",
)


@dataclass(frozen=True)
class OlsFit:
    intercept: float
    treatment: float | None
    exposure: float
    n_used: int
    arm: str = "both"
    window: tuple | None = None


def _normal_equations(x: np.ndarray, y: np.ndarray):
    """Least squares with an intercept via centred normal equations.

    ``x`` holds the non-intercept regressors as columns.  Raises
    :class:`DegenerateFitError` when a regressor has no spread or the
    regressors are collinear.
    """
    n, k = x.shape
    if n < k + 1:
        raise DegenerateFitError(f"{n} unit(s) cannot identify {k + 1} coefficients")
    mu = x.mean(axis=0)
    xc = x - mu
    yc = y - y.mean()
    xtx = xc.T @ xc
    spread = np.diag(xtx)
    if np.any(spread <= 1e-20 * n):
        raise DegenerateFitError("a regressor is constant on the fit window")
    scale = np.sqrt(spread)
    if np.linalg.cond(xtx / np.outer(scale, scale)) > 1e10:
        raise DegenerateFitError("regressors are collinear on the fit window")
    slopes = np.linalg.solve(xtx, xc.T @ yc)
    return float(y.mean() - mu @ slopes), slopes


def _as_z(a) -> np.ndarray:
    return np.asarray(getattr(a, "z", a)).astype(np.int64)


def _as_profile(e) -> ExposureProfile:
    if not isinstance(e, ExposureProfile):
        raise AdaThreshError("expected an ExposureProfile (integer treated counts and degrees)")
    return e


def _units(n: int, units) -> np.ndarray:
    if units is None:
        return np.arange(n)
    return np.asarray(units, dtype=np.int64)


def ols_fit(y, a, e, window=None, arm: str = "both", units=None) -> OlsFit:
    """Regress outcomes on ``(1, z, e)`` (``arm="both"``) or ``(1, e)``.

    ``window`` is an inclusive exposure interval ``(lo, hi)`` compared
    exactly; ``arm`` restricts to treated or control units.
    """
    prof = _as_profile(e)
    z = _as_z(a)
    idx = _units(len(z), units)
    mask = np.ones(len(idx), dtype=bool)
    if window is not None:
        lo, hi = window
        mask &= prof.at_least(lo)[idx] & prof.at_most(hi)[idx]
    if arm == "treated":
        mask &= z[idx] == 1
    elif arm == "control":
        mask &= z[idx] == 0
    elif arm != "both":
        raise AdaThreshError(f"unknown arm {arm!r}")
    sel = idx[mask]
    yy = np.asarray(y, dtype=np.float64)[sel]
    ee = prof.e[sel]
    if arm == "both":
        intercept, (b, g) = _normal_equations(np.column_stack([z[sel], ee]).astype(float), yy)
        return OlsFit(intercept, float(b), float(g), len(sel), arm, window)
    intercept, (g,) = _normal_equations(ee[:, None], yy)
    return OlsFit(intercept, None, float(g), len(sel), arm, window)


class _Sample:
    """Observed data on the estimation set, with per-unit exposure levels."""

    def __init__(self, y, a, e, grid: ThresholdGrid, units=None, labels=None):
        prof = _as_profile(e)
        z = _as_z(a)
        self.units = _units(len(z), units)
        self.labels = labels
        d = prof.d[self.units]
        if np.any(d == 0):
            raise IsolatedNodeError(self.label(int(np.flatnonzero(d == 0)[0])))
        self.grid = grid
        self.n = len(self.units)
        self.z = z[self.units]
        self.y = np.asarray(y, dtype=np.float64)[self.units]
        self.t = prof.t[self.units]
        self.d = d
        self.e = self.t / self.d
        table1, table0 = level_tables(int(d.max(initial=0)), grid)
        self.lvl1 = np.where(self.z == 1, table1[d, self.t], -1)
        self.lvl0 = np.where(self.z == 0, table0[d, self.t], -1)
        self.profile = prof

    def label(self, k: int):
        node = int(self.units[k])
        return self.labels[node] if self.labels is not None else node

    def arms(self, g: int):
        return self.lvl1 >= g, self.lvl0 >= g

    def global_fit(self) -> OlsFit:
        x = np.column_stack([self.z, self.e]).astype(float)
        intercept, (b, gm) = _normal_equations(x, self.y)
        return OlsFit(intercept, float(b), float(gm), self.n)

    def local_slopes(self, g: int, fallback: float):
        """Exposure slopes on the treated window [h,1] and control window [0,1-h]."""
        out = []
        for mask in self.arms(g):
            try:
                _, (slope,) = _normal_equations(self.e[mask][:, None], self.y[mask])
            except DegenerateFitError:
                slope = fallback
            out.append(float(slope))
        return out


class _HT:
    """Horvitz-Thompson quantities for one sample and one probability table."""

    def __init__(self, sample: _Sample, probs: ExposureProbabilities):
        if probs.grid != sample.grid:
            raise AdaThreshError("probability table and sample use different grids")
        self.s = sample
        self.probs = probs
        self.pi1 = probs.marginal1[sample.units]
        self.pi0 = probs.marginal0[sample.units]
        self._pairs = None

    def _check_positive(self, g: int):
        h = self.s.grid[g]
        for arm, pi in (("treatment", self.pi1[:, g]), ("control", self.pi0[:, g])):
            bad = np.flatnonzero(~(pi > 0))
            if len(bad):
                raise PositivityError(self.s.label(int(bad[0])), h, arm)

    def tau(self, g: int) -> float:
        self._check_positive(g)
        f1, f0 = self.s.arms(g)
        y = self.s.y
        return float((np.sum(y[f1] / self.pi1[f1, g]) - np.sum(y[f0] / self.pi0[f0, g])) / self.s.n)

    def bias(self, g: int, slope_treated: float, slope_control: float) -> float:
        self._check_positive(g)
        f1, f0 = self.s.arms(g)
        e = self.s.e
        treated = np.sum((1.0 - e[f1]) * slope_treated / self.pi1[f1, g])
        control = np.sum(e[f0] * slope_control / self.pi0[f0, g])
        return float((treated + control) / self.s.n)

    def local_pairs(self):
        """Dependent pairs with both ends in the estimation set, in local indices."""
        if self._pairs is None:
            if self.probs.joint is None:
                raise AdaThreshError("the variance estimator needs pairwise joint probabilities")
            pos = np.full(self.probs.n, -1, dtype=np.int64)
            pos[self.s.units] = np.arange(self.s.n)
            a = pos[self.probs.pairs[:, 0]]
            b = pos[self.probs.pairs[:, 1]]
            keep = (a >= 0) & (b >= 0)
            self._pairs = (a[keep], b[keep], self.probs.joint[keep])
        return self._pairs

    def variance(self, g: int) -> float:
        """Conservative design-based variance estimate at grid index ``g``.

        Pair sums run over dependent pairs only: for independent pairs the
        joint equals the product of marginals and every pair term vanishes.
        Treated/control pairs that can never co-occur, including each unit
        with itself, enter through the squared-outcome bound instead.
        """
        self._check_positive(g)
        s = self.s
        n = s.n
        y = s.y
        p1, p0 = self.pi1[:, g], self.pi0[:, g]
        f1, f0 = s.arms(g)
        a, b, joint = self.local_pairs()
        j11, j00, j10, j01 = (joint[:, k, g] for k in range(4))

        total = np.sum(y[f1] ** 2 / p1[f1] * (1.0 / p1[f1] - 1.0))
        total += np.sum(y[f0] ** 2 / p0[f0] * (1.0 / p0[f0] - 1.0))

        for fa, fb, jj, pa, pb, kind in ((f1, f1, j11, p1, p1, "11"), (f0, f0, j00, p0, p0, "00")):
            both = fa[a] & fb[b]
            zero = both & (jj <= 0)
            if zero.any():
                k = int(np.flatnonzero(zero)[0])
                raise VarianceInconsistencyError(s.label(int(a[k])), s.label(int(b[k])), s.grid[g], kind)
            aa, bb = a[both], b[both]
            total += 2.0 * np.sum(y[aa] * y[bb] * (1.0 / (pa[aa] * pb[bb]) - 1.0 / jj[both]))

        # ordered (treated i, control j): slot 10 is (a, b), slot 01 is (b, a)
        cnt1 = np.ones(n)
        cnt0 = np.ones(n)
        for ti, cj, jj in ((a, b, j10), (b, a, j01)):
            pos = jj > 0
            obs = f1[ti] & f0[cj] & pos
            ii, kk = ti[obs], cj[obs]
            total -= 2.0 * np.sum(y[ii] * y[kk] * (1.0 / (p1[ii] * p0[kk]) - 1.0 / jj[obs]))
            cnt1 += np.bincount(ti[~pos], minlength=n)
            cnt0 += np.bincount(cj[~pos], minlength=n)
        total += np.sum(cnt1[f1] * y[f1] ** 2 / p1[f1])
        total += np.sum(cnt0[f0] * y[f0] ** 2 / p0[f0])
        return float(total / n**2)


class _DiM:
    def __init__(self, sample: _Sample):
        self.s = sample

    def _arms(self, g: int):
        f1, f0 = self.s.arms(g)
        h = self.s.grid[g]
        if not f1.any():
            raise EmptyArmError("treatment", h)
        if not f0.any():
            raise EmptyArmError("control", h)
        return f1, f0

    def tau(self, g: int) -> float:
        f1, f0 = self._arms(g)
        return float(self.s.y[f1].mean() - self.s.y[f0].mean())

    def bias(self, g: int, slope_treated: float, slope_control: float) -> float:
        f1, f0 = self._arms(g)
        e = self.s.e
        return float(
            np.sum((1.0 - e[f1]) * slope_treated) / f1.sum() + np.sum(e[f0] * slope_control) / f0.sum()
        )

    def variance(self, g: int) -> float:
        f1, f0 = self._arms(g)
        n = self.s.n
        if n < 2:
            raise AdaThreshError("the difference-in-means variance needs at least two units")
        y = self.s.y
        parts = []
        for f in (f1, f0):
            masked = y * f
            k = f.sum()
            parts.append(np.sum((masked - masked.sum() / k) ** 2) / k)
        return float(2.0 / (n - 1) * (parts[0] + parts[1]))


def _grid_of(probs, grid):
    if grid is not None:
        return grid if isinstance(grid, ThresholdGrid) else ThresholdGrid(grid)
    if probs is None:
        raise AdaThreshError("a threshold grid is required")
    return probs.grid


# -- single-threshold entry points -----------------------------------------

def ht_estimate(y, a, e, probs: ExposureProbabilities, h, units=None) -> float:
    """Horvitz-Thompson contrast of exposed-treated and exposed-control units."""
    s = _Sample(y, a, e, probs.grid, units)
    return _HT(s, probs).tau(probs.grid.index(h))


def ht_bandwidth_form(y, a, e, probs: ExposureProbabilities, bandwidth, units=None) -> float:
    """Same estimator written as a kernel of width ``bandwidth`` around ``z_i``.

    Units with ``|z_i - e_i| <= bandwidth`` enter with sign ``2 z_i - 1``,
    weighted by the probability of that event in their observed arm, which
    is the threshold ``h = 1 - bandwidth`` exposure probability.
    """
    prof = _as_profile(e)
    z = _as_z(a)
    idx = _units(len(z), units)
    b = Fraction(bandwidth)
    g = probs.grid.index(1 - b)
    zz, t, d = z[idx], prof.t[idx], prof.d[idx]
    inside = np.abs(zz * d - t) * b.denominator <= b.numerator * d
    pr = np.where(zz == 1, probs.marginal1[idx, g], probs.marginal0[idx, g])
    if np.any(~(pr > 0)):
        k = int(np.flatnonzero(~(pr > 0))[0])
        raise PositivityError(int(idx[k]), 1 - b, "treatment" if zz[k] else "control")
    yy = np.asarray(y, dtype=np.float64)[idx]
    return float(np.sum(np.where(inside, (2 * zz - 1) * yy / pr, 0.0)) / len(idx))


def dim_estimate(y, a, e, h, units=None, grid=None) -> float:
    grid = grid or ThresholdGrid(sorted({Fraction(0), Fraction(h), Fraction(1)}))
    s = _Sample(y, a, e, grid, units)
    return _DiM(s).tau(grid.index(h))


def ht_bias_signal(e, a, gamma_hat, probs: ExposureProbabilities, h, units=None,
                   gamma_hat_control=None) -> float:
    """Inverse-probability-weighted bias signal.

    ``gamma_hat`` multiplies the treated sum; ``gamma_hat_control`` (defaults
    to ``gamma_hat``) the control sum, as in the local-regression variant.
    """
    z = _as_z(a)
    s = _Sample(np.zeros(len(z)), z, e, probs.grid, units)
    gc = gamma_hat if gamma_hat_control is None else gamma_hat_control
    return _HT(s, probs).bias(probs.grid.index(h), gamma_hat, gc)


def dim_bias_signal(e, a, gamma_hat, h, units=None, gamma_hat_control=None, grid=None) -> float:
    z = _as_z(a)
    grid = grid or ThresholdGrid(sorted({Fraction(0), Fraction(h), Fraction(1)}))
    s = _Sample(np.zeros(len(z)), z, e, grid, units)
    gc = gamma_hat if gamma_hat_control is None else gamma_hat_control
    return _DiM(s).bias(grid.index(h), gamma_hat, gc)


def ht_variance_estimate(y, a, e, probs: ExposureProbabilities, h, units=None) -> float:
    s = _Sample(y, a, e, probs.grid, units)
    return _HT(s, probs).variance(probs.grid.index(h))


def dim_variance_estimate(y, a, e, h, units=None, grid=None) -> float:
    grid = grid or ThresholdGrid(sorted({Fraction(0), Fraction(h), Fraction(1)}))
    s = _Sample(y, a, e, grid, units)
    return _DiM(s).variance(grid.index(h))


# -- profiles and selection --------------------------------------------------

@dataclass
class MseProfile:
    grid: ThresholdGrid
    tau_hat: np.ndarray
    bias_hat: np.ndarray
    var_hat: np.ndarray
    mse_hat: np.ndarray
    feasible: np.ndarray
    reasons: list
    selected_index: int
    family: str = "HT"
    bias_mode: str = "global"
    gamma_hat: float = math.nan
    local_slopes: np.ndarray | None = None

    @property
    def selected_h(self) -> Fraction:
        return self.grid[self.selected_index]

    def to_rows(self, replicate=None, rule="adaptive") -> list[dict]:
        rows = []
        for g, h in enumerate(self.grid):
            rows.append({
                "replicate": replicate,
                "family": self.family,
                "rule": rule,
                "h": str(h),
                "tau_hat": self.tau_hat[g],
                "bias_hat": self.bias_hat[g],
                "var_hat": self.var_hat[g],
                "mse_hat": self.mse_hat[g],
                "selected": int(g == self.selected_index),
            })
        return rows

    def to_dict(self) -> dict:
        def clean(v):
            v = float(v)
            return None if math.isnan(v) else v

        return {
            "family": self.family,
            "bias_mode": self.bias_mode,
            "grid": self.grid.to_list(),
            "tau_hat": [clean(v) for v in self.tau_hat],
            "bias_hat": [clean(v) for v in self.bias_hat],
            "var_hat": [clean(v) for v in self.var_hat],
            "mse_hat": [clean(v) for v in self.mse_hat],
            "feasible": [bool(v) for v in self.feasible],
            "reasons": self.reasons,
            "selected_h": str(self.selected_h),
            "gamma_hat": self.gamma_hat,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _select(mse: np.ndarray, feasible: np.ndarray) -> int:
    """Argmin over feasible entries; ties go to the smaller threshold."""
    cand = np.flatnonzero(feasible)
    if len(cand) == 0:
        raise NoFeasibleThresholdError("no threshold on the grid is feasible")
    return int(cand[np.argmin(mse[cand])])


def mse_profile(y, a, e, probs: ExposureProbabilities | None, grid=None, family: str = "HT",
                bias_mode: str = "global", units=None, labels=None) -> MseProfile:
    """Estimated bias, variance and MSE at every grid threshold.

    Thresholds where a component cannot be computed (zero exposure
    probability, empty arm, inconsistent joints) are marked infeasible and
    skipped by the selector; their reason is recorded.
    """
    if family not in FAMILIES:
        raise AdaThreshError(f"unknown estimator family {family!r}")
    if bias_mode not in BIAS_MODES:
        raise AdaThreshError(f"unknown bias mode {bias_mode!r}")
    grid = _grid_of(probs, grid)
    s = _Sample(y, a, e, grid, units, labels)
    est = _HT(s, probs) if family == "HT" else _DiM(s)
    fit = s.global_fit()
    G = len(grid)
    tau = np.full(G, np.nan)
    bias = np.full(G, np.nan)
    var = np.full(G, np.nan)
    slopes = np.full((G, 2), np.nan)
    reasons: list = [None] * G
    for g in range(G):
        try:
            tau[g] = est.tau(g)
            if bias_mode == "local":
                slopes[g] = s.local_slopes(g, fit.exposure)
            else:
                slopes[g] = fit.exposure
            bias[g] = est.bias(g, slopes[g, 0], slopes[g, 1])
            var[g] = est.variance(g)
        except (PositivityError, EmptyArmError, VarianceInconsistencyError) as exc:
            reasons[g] = str(exc)
    mse = bias**2 + var
    feasible = np.isfinite(mse)
    return MseProfile(
        grid, tau, bias, var, mse, feasible, reasons, _select(mse, feasible),
        family, bias_mode, fit.exposure, slopes if bias_mode == "local" else None,
    )


def lepski_select(estimates, sdevs, grid) -> Fraction:
    """Smallest threshold whose interval meets all intervals above it.

    Intervals are ``estimate +/- 2 sdev``; the scan starts at the largest
    threshold and stops at the first interval that empties the running
    intersection.  Non-finite entries are skipped.
    """
    grid = grid if isinstance(grid, ThresholdGrid) else ThresholdGrid(grid)
    est = np.asarray(estimates, dtype=np.float64)
    sd = np.asarray(sdevs, dtype=np.float64)
    ok = np.isfinite(est) & np.isfinite(sd)
    order = np.flatnonzero(ok)[::-1]
    if len(order) == 0:
        raise NoFeasibleThresholdError("Lepski's rule needs at least one finite interval")
    lo, hi = -np.inf, np.inf
    chosen = int(order[0])
    for g in order:
        lo = max(lo, est[g] - 2.0 * sd[g])
        hi = min(hi, est[g] + 2.0 * sd[g])
        if lo > hi:
            break
        chosen = int(g)
    return grid[chosen]


@dataclass
class EstimatorReport:
    family: str
    rule: str
    estimate: float
    h: Fraction
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "rule": self.rule,
            "estimate": self.estimate,
            "h": str(self.h),
            "diagnostics": self.diagnostics,
        }


def reports_from_profile(profile: MseProfile, rules=RULES, diagnostics=None) -> dict:
    """One report per rule from an already computed profile.

    Rules whose threshold is unavailable map to the exception instance.
    """
    out = {}
    diag = dict(diagnostics or {})
    diag["infeasible_h"] = [str(h) for h, ok in zip(profile.grid, profile.feasible) if not ok]
    for rule in rules:
        try:
            if rule == "fixed-0":
                g = 0
            elif rule == "fixed-1":
                g = len(profile.grid) - 1
            elif rule == "adaptive":
                g = profile.selected_index
            elif rule == "lepski":
                sd = np.sqrt(np.clip(profile.var_hat, 0.0, None))
                g = profile.grid.index(lepski_select(profile.tau_hat, sd, profile.grid))
            else:
                raise AdaThreshError(f"unknown rule {rule!r}")
            if not np.isfinite(profile.tau_hat[g]):
                raise NoFeasibleThresholdError(
                    f"{profile.family} estimate unavailable at h={profile.grid[g]}: {profile.reasons[g]}"
                )
            out[rule] = EstimatorReport(profile.family, rule, float(profile.tau_hat[g]), profile.grid[g], diag)
        except AdaThreshError as exc:
            out[rule] = exc
    return out


def estimate_with_rule(rule: str, y, a, e, probs: ExposureProbabilities | None, grid=None,
                       family: str = "HT", bias_mode: str = "global", units=None) -> EstimatorReport:
    if rule not in RULES:
        raise AdaThreshError(f"unknown rule {rule!r}; expected one of {RULES}")
    grid = _grid_of(probs, grid)
    if rule in ("fixed-0", "fixed-1"):
        h = grid[0] if rule == "fixed-0" else grid[-1]
        s = _Sample(y, a, e, grid, units)
        est = _HT(s, probs) if family == "HT" else _DiM(s)
        value = est.tau(grid.index(h))
        return EstimatorReport(family, rule, value, h, {"units": s.n})
    prof = mse_profile(y, a, e, probs, grid, family, bias_mode, units)
    rep = reports_from_profile(prof, [rule], {"units": len(_units(len(_as_z(a)), units))})[rule]
    if isinstance(rep, Exception):
        raise rep
    return rep
