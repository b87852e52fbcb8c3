"""Experiment runner: config handling, probability caching and RMSE tables.

A config is a nested mapping with sections ``graph``, ``design``,
``model``, ``probs``, ``grid``, ``estimators`` and ``run``; see
``config_schema.json`` for the full contract and :data:`DEFAULTS` for the
values used when a field is omitted.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import os
import platform
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import __version__, kernels, rng
from .design import Design, sample_matrix
from .errors import AdaThreshError, ConfigError, EnumerationCapError
from .estimators import RULES, estimate_with_rule, mse_profile, reports_from_profile
from .exposure import (
    ExposureProbabilities,
    ExposureProfile,
    ThresholdGrid,
    exact_probabilities,
    exact_unit_marginals,
    mc_probabilities,
    probability_key,
)
from .graph import (
    Clustering,
    Graph,
    contiguous_clusters,
    induced_subgraph,
    kth_power_cycle,
    non_isolated_subset,
    read_clusters,
    read_edge_list,
    sbm,
    sbm_blocks,
)
from .outcomes import OutcomeModel, evaluate, true_ate

log = logging.getLogger(__name__)

DEFAULTS = {
    "graph": {"kind": "power_cycle", "n": 1000, "k": 2, "isolated": "reject", "subset": None},
    "design": {"kind": "unit", "p": 0.5, "clusters": None},
    "model": {
        "alpha": 10.0, "beta": 10.0, "f_kind": "linear", "gamma": None,
        "gamma_over_beta": [0.0, 1.0, 2.0, 3.0], "noise_sd": 1.0, "noise_seed": 0,
    },
    "probs": {"engine": "mc", "draws": 10000, "seed": 1, "cache": True, "cache_dir": None},
    "grid": {"denominator": None, "values": None},
    "estimators": {"families": ["HT"], "rules": list(RULES), "bias_mode": "global"},
    "run": {"replicates": 200, "seed": 0, "threads": 1, "output_dir": "results", "name": "experiment"},
}

# fields that never change results
_NON_SEMANTIC = {("run", "threads"), ("run", "output_dir"), ("run", "name"),
                 ("probs", "cache"), ("probs", "cache_dir")}

RESULT_COLUMNS = (
    "gamma_over_beta", "gamma", "family", "rule", "rmse", "band", "rmse_se",
    "replicates", "failed", "mean_h", "complete",
)
LOG_COLUMNS = (
    "gamma_index", "gamma_over_beta", "replicate", "family", "rule", "h", "estimate", "ate",
    "normalized_error", "status",
)


def _schema() -> dict:
    return json.loads(resources.files("adathresh").joinpath("config_schema.json").read_text())


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class ExperimentConfig:
    data: dict
    base_dir: Path = field(default_factory=Path.cwd)

    def __getitem__(self, section):
        return self.data[section]

    def semantic(self) -> dict:
        d = copy.deepcopy(self.data)
        for sec, key in _NON_SEMANTIC:
            d.get(sec, {}).pop(key, None)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.semantic(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def gammas(self) -> list[tuple[float, float]]:
        """``(gamma, gamma_over_beta)`` pairs in sweep order."""
        m = self.data["model"]
        beta = float(m["beta"])
        if m.get("gamma") is not None:
            return [(float(g), float(g) / beta if beta else float("nan")) for g in m["gamma"]]
        return [(float(r) * beta, float(r)) for r in m["gamma_over_beta"]]


def load_config(source=None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a JSON or YAML config (path or mapping), apply defaults, validate."""
    base_dir = Path.cwd()
    if source is None:
        raw = {}
    elif isinstance(source, dict):
        raw = source
    else:
        path = Path(source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from None
        raw = raw or {}
        base_dir = path.resolve().parent
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    if overrides:
        raw = _merge(raw, overrides)
    data = _merge(DEFAULTS, raw)
    try:
        jsonschema.validate(data, _schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None
    _check_semantics(data)
    return ExperimentConfig(data, base_dir)


def _check_semantics(d: dict):
    g = d["graph"]
    if g["kind"] == "edge_list" and "path" not in g:
        raise ConfigError("graph.path is required for an edge_list graph")
    if g["kind"] == "sbm" and "block_sizes" not in g:
        raise ConfigError("graph.block_sizes is required for an sbm graph")
    des = d["design"]
    if des["kind"] == "cluster" and not des.get("clusters"):
        raise ConfigError("design.clusters is required for a cluster design")
    cl = des.get("clusters") or {}
    if cl.get("source") == "contiguous" and "size" not in cl:
        raise ConfigError("design.clusters.size is required for contiguous clusters")
    if cl.get("source") == "file" and "path" not in cl:
        raise ConfigError("design.clusters.path is required for file clusters")
    if cl.get("source") == "sbm_blocks" and g["kind"] != "sbm":
        raise ConfigError("sbm_blocks clusters need an sbm graph")


# -- building blocks -------------------------------------------------------------

@dataclass
class Setting:
    """Everything derived from a config before any replicate runs."""

    graph: Graph
    units: np.ndarray
    design: Design
    grid: ThresholdGrid


def build_graph(cfg: ExperimentConfig) -> tuple[Graph, np.ndarray]:
    """Graph plus the estimation set (all nodes unless a subset rule is set)."""
    s = cfg["graph"]
    kind = s["kind"]
    if kind == "power_cycle":
        g = kth_power_cycle(int(s["n"]), int(s["k"]))
    elif kind == "sbm":
        g = sbm(s["block_sizes"], s.get("p_in", 0.5), s.get("p_out", 0.01), s.get("seed", 0))
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            g = read_edge_list(cfg.resolve(s["path"]))
        if g.self_loops_dropped:
            log.warning("dropped %d self-loop line(s) from %s", g.self_loops_dropped, s["path"])
    if s["isolated"] == "drop":
        keep = non_isolated_subset(g)
        if len(keep) < g.n:
            g = induced_subgraph(g, keep)
    units = np.arange(g.n)
    sub = s.get("subset")
    if sub:
        units = non_isolated_subset(g)
        if sub["rule"] == "first_non_isolated" and sub.get("size"):
            if len(units) < sub["size"]:
                raise ConfigError(f"only {len(units)} non-isolated nodes, subset needs {sub['size']}")
            units = units[: sub["size"]]
    return g, units


def build_design(cfg: ExperimentConfig, g: Graph) -> Design:
    s = cfg["design"]
    if s["kind"] == "unit":
        return Design("unit", s["p"])
    cl = s["clusters"]
    if cl["source"] == "contiguous":
        clustering = contiguous_clusters(g, int(cl["size"]))
    elif cl["source"] == "file":
        clustering = read_clusters(cfg.resolve(cl["path"]), g)
    else:
        clustering = Clustering.from_labels(g, sbm_blocks(cfg["graph"]["block_sizes"]))
    return Design("cluster", s["p"], clustering)


def build_grid(cfg: ExperimentConfig, g: Graph, units) -> ThresholdGrid:
    s = cfg["grid"]
    if s.get("values"):
        return ThresholdGrid(Fraction(str(v)) for v in s["values"])
    if s.get("denominator"):
        return ThresholdGrid.uniform(int(s["denominator"]))
    return ThresholdGrid.for_graph(g, units)


def build_setting(cfg: ExperimentConfig) -> Setting:
    g, units = build_graph(cfg)
    return Setting(g, units, build_design(cfg, g), build_grid(cfg, g, units))


def cache_dir(cfg: ExperimentConfig) -> Path:
    d = cfg["probs"].get("cache_dir") or os.environ.get("ADATHRESH_CACHE_DIR")
    if d:
        return cfg.resolve(d) if cfg["probs"].get("cache_dir") else Path(d)
    return Path.home() / ".cache" / "adathresh"


def exact_marginal_zscores(probs: ExposureProbabilities, g: Graph, p: float, units=None) -> float:
    """Largest |MC - exact| / binomial standard error over marginal cells."""
    exact = exact_unit_marginals(g, p, probs.grid)
    rows = np.arange(g.n) if units is None else np.asarray(units)
    worst = 0.0
    for mc, ex in ((probs.marginal1, exact.marginal1), (probs.marginal0, exact.marginal0)):
        a, b = mc[rows], ex[rows]
        se = np.sqrt(b * (1 - b) / probs.draws)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(se > 0, np.abs(a - b) / se, np.where(a == b, 0.0, np.inf))
        worst = max(worst, float(np.nanmax(z)) if z.size else 0.0)
    return worst


def _compute_probabilities(cfg: ExperimentConfig, st: Setting, threads: int) -> ExposureProbabilities:
    s = cfg["probs"]
    units = None if len(st.units) == st.graph.n else st.units
    if s["engine"] == "exact":
        try:
            return exact_probabilities(st.graph, st.design, st.grid, units=units)
        except EnumerationCapError:
            if st.design.kind != "unit":
                raise
            log.info("enumeration too large; exact marginals with Monte Carlo joints")
        mc = mc_probabilities(st.graph, st.design, st.grid, s["draws"], s["seed"], units=units,
                              threads=threads)
        ex = exact_unit_marginals(st.graph, st.design.p, st.grid)
        mc.marginal1, mc.marginal0 = ex.marginal1, ex.marginal0
        mc.source = "exact-marginals"
        return mc
    return mc_probabilities(st.graph, st.design, st.grid, s["draws"], s["seed"], units=units,
                            threads=threads)


def precompute_probabilities(cfg: ExperimentConfig, setting: Setting | None = None,
                             threads: int | None = None, use_cache: bool | None = None):
    """Exposure probabilities for a config, via the on-disk cache when enabled.

    Returns ``(probs, path)``; ``path`` is None when caching is off.
    """
    st = setting or build_setting(cfg)
    threads = threads or cfg["run"]["threads"]
    s = cfg["probs"]
    units = None if len(st.units) == st.graph.n else st.units
    draws = s["draws"] if s["engine"] == "mc" else 0
    key = probability_key(st.graph, st.design, st.grid, draws, s["seed"], s["engine"], units)
    use_cache = s["cache"] if use_cache is None else use_cache
    path = None
    if use_cache:
        digest = hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:20]
        path = cache_dir(cfg) / f"probs-{digest}.npz"
        if path.exists():
            try:
                probs = ExposureProbabilities.load(path)
            except (AdaThreshError, OSError, ValueError, KeyError) as exc:
                log.warning("unreadable probability cache %s (%s); recomputing", path, exc)
            else:
                if probs.key == key:
                    _cross_check(probs, st, units)
                    return probs, path
                warnings.warn(f"probability cache {path} has a different key; recomputing",
                              stacklevel=2)
    probs = _compute_probabilities(cfg, st, threads)
    probs.key = key
    _cross_check(probs, st, units)
    if path is not None:
        probs.save(path)
    return probs, path


def _cross_check(probs: ExposureProbabilities, st: Setting, units):
    if probs.source != "monte-carlo" or st.design.kind != "unit":
        return
    worst = exact_marginal_zscores(probs, st.graph, st.design.p, units)
    if worst > 5.0:
        log.warning("Monte Carlo marginals deviate from exact tails by %.1f standard errors", worst)


# -- the experiment -------------------------------------------------------------

@dataclass
class ResultTable:
    rows: list
    log_rows: list
    metadata: dict

    @staticmethod
    def _fmt(v):
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        return v

    def _csv(self, rows, columns) -> str:
        out = io.StringIO()
        w = csv.DictWriter(out, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: self._fmt(r[k]) for k in columns})
        return out.getvalue()

    def to_csv(self) -> str:
        return self._csv(self.rows, RESULT_COLUMNS)

    def log_csv(self) -> str:
        return self._csv(self.log_rows, LOG_COLUMNS)

    def write(self, out_dir, name: str) -> dict:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "results": out_dir / f"{name}.csv",
            "log": out_dir / f"{name}_log.csv",
            "metadata": out_dir / f"{name}_meta.json",
        }
        paths["results"].write_text(self.to_csv())
        paths["log"].write_text(self.log_csv())
        paths["metadata"].write_text(json.dumps(self.metadata, indent=2, sort_keys=True, default=str))
        return paths

    def cell(self, gamma_over_beta, rule, family="HT") -> dict:
        for r in self.rows:
            if r["rule"] == rule and r["family"] == family and r["gamma_over_beta"] == gamma_over_beta:
                return r
        raise KeyError((gamma_over_beta, rule, family))


def _replicate(st: Setting, probs, model, z, t, families, rules, bias_mode):
    """All (family, rule) outcomes for one assignment, as dicts."""
    prof = ExposureProfile(t, st.graph.degrees)
    y = evaluate(model, z, prof)
    out = []
    for fam in families:
        fam_probs = probs if fam == "HT" else None
        try:
            profile = mse_profile(y, z, prof, fam_probs, st.grid, fam, bias_mode, st.units,
                                  labels=st.graph.ids)
            reports = reports_from_profile(profile, rules)
        except AdaThreshError as exc:
            reports = {}
            for rule in rules:
                if rule.startswith("fixed"):
                    try:
                        reports[rule] = estimate_with_rule(rule, y, z, prof, fam_probs, st.grid, fam,
                                                           bias_mode, st.units)
                    except AdaThreshError as inner:
                        reports[rule] = inner
                else:
                    reports[rule] = exc
        for rule in rules:
            out.append((fam, rule, reports[rule]))
    return out


def run_experiment(cfg: ExperimentConfig, probs: ExposureProbabilities | None = None,
                   threads: int | None = None, setting: Setting | None = None) -> ResultTable:
    """Sweep the exposure-effect sizes and replicate the design.

    Replicate ``r`` of sweep point ``j`` uses the assignment keyed by
    ``(run.seed, j, r)``, so output does not depend on ``threads``.
    """
    start = time.perf_counter()
    st = setting or build_setting(cfg)
    threads = threads or cfg["run"]["threads"]
    if probs is None and "HT" in cfg["estimators"]["families"]:
        probs, _ = precompute_probabilities(cfg, st, threads)
    m = cfg["model"]
    est = cfg["estimators"]
    families, rules, bias_mode = est["families"], est["rules"], est["bias_mode"]
    reps = cfg["run"]["replicates"]
    master = cfg["run"]["seed"]
    noise = OutcomeModel.with_noise(st.graph.n, m["noise_sd"], m["noise_seed"]).epsilon
    rows, log_rows, ates = [], [], []
    for gi, (gamma, ratio) in enumerate(cfg.gammas()):
        model = OutcomeModel(m["alpha"], m["beta"], gamma, m["f_kind"], noise)
        tau = true_ate(model)
        if tau == 0:
            raise AdaThreshError(f"true ATE is zero at gamma={gamma}; normalised errors are undefined")
        ates.append(tau)
        z = sample_matrix(st.design, st.graph, rng.derive_seed(master, gi), np.arange(reps))
        t = kernels.treated_counts(z, st.graph.indptr, st.graph.indices).astype(np.int64)

        def job(r, z=z, t=t, model=model):
            return _replicate(st, probs, model, z[r], t[r], families, rules, bias_mode)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                per_rep = list(pool.map(job, range(reps)))
        else:
            per_rep = [job(r) for r in range(reps)]

        cells: dict = {}
        for r, outcomes in enumerate(per_rep):
            for fam, rule, rep in outcomes:
                ok = not isinstance(rep, Exception)
                err = (rep.estimate - tau) / tau if ok else float("nan")
                log_rows.append({
                    "gamma_index": gi, "gamma_over_beta": ratio, "replicate": r,
                    "family": fam, "rule": rule,
                    "h": str(rep.h) if ok else "",
                    "estimate": rep.estimate if ok else float("nan"),
                    "ate": tau, "normalized_error": err,
                    "status": "ok" if ok else f"{type(rep).__name__}: {rep}",
                })
                cells.setdefault((fam, rule), []).append((err, float(rep.h) if ok else float("nan")))
        for fam in families:
            for rule in rules:
                rows.append(_aggregate(ratio, gamma, fam, rule, cells[(fam, rule)]))

    meta = {
        "config_hash": cfg.config_hash(),
        "config": cfg.data,
        "versions": {
            "adathresh": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
            "kernel_backend": kernels.BACKEND,
        },
        "runtime_seconds": round(time.perf_counter() - start, 3),
        "graph": {
            "n": st.graph.n, "edges": st.graph.num_edges, "d_max": st.graph.d_max,
            "fingerprint": st.graph.fingerprint(), "self_loops_dropped": st.graph.self_loops_dropped,
        },
        "estimation_units": int(len(st.units)),
        "grid": st.grid.to_list(),
        "ate": ates,
        "band": "2 * sd of per-replicate |normalized error|",
    }
    if st.design.clustering is not None:
        meta["clusters"] = {"k": st.design.clustering.k, "s_max": st.design.clustering.s_max}
    if probs is not None:
        meta["probabilities"] = {"source": probs.source, "draws": probs.draws,
                                 "zero_joint_cells": probs.zero_cells()}
    return ResultTable(rows, log_rows, meta)


def _aggregate(ratio, gamma, family, rule, entries) -> dict:
    err = np.array([e for e, _ in entries])
    hs = np.array([h for _, h in entries])
    ok = np.isfinite(err)
    e = err[ok]
    if len(e):
        sq = e**2
        rmse = float(np.sqrt(sq.mean()))
        band = float(2.0 * np.abs(e).std())
        rmse_se = float(sq.std() / (2.0 * rmse * np.sqrt(len(e)))) if rmse > 0 else 0.0
        mean_h = float(hs[ok].mean())
    else:
        rmse = band = rmse_se = mean_h = float("nan")
    return {
        "gamma_over_beta": ratio, "gamma": gamma, "family": family, "rule": rule,
        "rmse": rmse, "band": band, "rmse_se": rmse_se, "replicates": int(ok.sum()),
        "failed": int((~ok).sum()), "mean_h": mean_h, "complete": int(ok.all()),
    }


def run_oracle(cfg: ExperimentConfig, method: str = "mc", draws: int = 1000, seed: int | None = None,
               family: str = "HT", probs=None, setting: Setting | None = None):
    """Oracle profiles, one per sweep point, as ``[(gamma, ratio, OracleProfile)]``."""
    from .oracle import exact_mse, mc_mse

    st = setting or build_setting(cfg)
    m = cfg["model"]
    if method == "exact":
        probs_used = None
    else:
        probs_used = probs or (precompute_probabilities(cfg, st)[0] if family == "HT" else None)
    noise = OutcomeModel.with_noise(st.graph.n, m["noise_sd"], m["noise_seed"]).epsilon
    seed = cfg["run"]["seed"] if seed is None else seed
    out = []
    for gi, (gamma, ratio) in enumerate(cfg.gammas()):
        model = OutcomeModel(m["alpha"], m["beta"], gamma, m["f_kind"], noise)
        if method == "exact":
            prof = exact_mse(st.graph, st.design, model, None, st.grid, family, st.units)
        else:
            prof = mc_mse(st.graph, st.design, model, probs_used, st.grid, draws,
                          rng.derive_seed(seed, gi), family, st.units)
        out.append((gamma, ratio, prof))
    return out
