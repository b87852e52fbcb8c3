"""Command line entry point: ``adathresh <subcommand> ...``.

Exit codes: 0 success, 1 usage or config error, 2 data or feasibility error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import AdaThreshError, ConfigError
from .estimators import BIAS_MODES, FAMILIES, RULES, estimate_with_rule, mse_profile
from .exposure import ExposureProbabilities, ThresholdGrid, exposure_fractions
from .graph import kth_power_cycle, read_edge_list, sbm

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="adathresh", description="Adaptive exposure-threshold ATE estimation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-graph", help="write a generated graph as an edge list")
    g.add_argument("--kind", choices=["power_cycle", "sbm"], default="power_cycle")
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--k", type=int, default=2)
    g.add_argument("--blocks", type=int, nargs="+", help="SBM block sizes")
    g.add_argument("--p-in", type=float, default=0.5)
    g.add_argument("--p-out", type=float, default=0.01)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--out", default="-")

    pr = sub.add_parser("probs", help="precompute and cache exposure probabilities")
    pr.add_argument("--config", required=True)
    pr.add_argument("--threads", type=int)
    pr.add_argument("-o", "--out", help="also save the table to this path")

    e = sub.add_parser("estimate", help="estimate the ATE on one observed dataset")
    e.add_argument("--graph", required=True, help="edge list")
    e.add_argument("--data", required=True, help="CSV with columns node,z,y")
    e.add_argument("--probs", help="probability table (.npz) for the HT family")
    e.add_argument("--rule", choices=RULES, default="adaptive")
    e.add_argument("--family", choices=FAMILIES, default="HT")
    e.add_argument("--bias-mode", choices=BIAS_MODES, default="global")
    e.add_argument("--profile", action="store_true", help="print the per-threshold profile too")

    x = sub.add_parser("experiment", help="run a simulation experiment")
    x.add_argument("--config", required=True)
    x.add_argument("--threads", type=int)
    x.add_argument("--out-dir")
    x.add_argument("--name")

    o = sub.add_parser("oracle", help="true bias/variance/MSE per threshold")
    o.add_argument("--config", required=True)
    o.add_argument("--method", choices=["exact", "mc"], default="mc")
    o.add_argument("--draws", type=int, default=1000)
    o.add_argument("--seed", type=int)
    o.add_argument("--family", choices=FAMILIES, default="HT")
    o.add_argument("-o", "--out", default="-")
    return p


def _write(text: str, dest: str):
    if dest == "-":
        sys.stdout.write(text)
    else:
        Path(dest).parent.mkdir(parents=True, exist_ok=True)
        Path(dest).write_text(text)


def _load(path):
    from .harness import load_config

    if not Path(path).is_file():
        raise ConfigError(f"config file not found: {path}")
    return load_config(path)


def cmd_gen_graph(a) -> int:
    if a.kind == "power_cycle":
        g = kth_power_cycle(a.n, a.k)
    else:
        if not a.blocks:
            raise UsageError("--blocks is required for --kind sbm")
        g = sbm(a.blocks, a.p_in, a.p_out, a.seed)
    _write(g.to_edge_list(), a.out)
    return EXIT_OK


def cmd_probs(a) -> int:
    from .harness import precompute_probabilities

    cfg = _load(a.config)
    probs, path = precompute_probabilities(cfg, threads=a.threads)
    if a.out:
        probs.save(a.out)
    print(json.dumps({
        "cache": str(path) if path else None, "out": a.out, "source": probs.source,
        "draws": probs.draws, "pairs": int(len(probs.pairs)), "zero_joint_cells": probs.zero_cells(),
    }))
    return EXIT_OK


def _read_data(path, g):
    lookup = {lab: i for i, lab in enumerate(g.ids)} if g.ids is not None else None
    z = np.full(g.n, -1, dtype=np.int64)
    y = np.full(g.n, np.nan)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not {"node", "z", "y"} <= set(reader.fieldnames):
            raise AdaThreshError("data file needs columns node, z, y")
        for line, row in enumerate(reader, start=2):
            try:
                node, zi, yi = int(row["node"]), int(row["z"]), float(row["y"])
            except (TypeError, ValueError):
                raise AdaThreshError(f"line {line}: malformed row {row}") from None
            i = lookup.get(node) if lookup is not None else node
            if i is None or not 0 <= i < g.n:
                raise AdaThreshError(f"line {line}: unknown node {node}")
            if zi not in (0, 1):
                raise AdaThreshError(f"line {line}: z must be 0 or 1")
            z[i], y[i] = zi, yi
    if np.any(z < 0):
        raise AdaThreshError(f"{int(np.sum(z < 0))} graph node(s) missing from the data file")
    return z.astype(np.uint8), y


def cmd_estimate(a) -> int:
    g = read_edge_list(a.graph)
    z, y = _read_data(a.data, g)
    e = exposure_fractions(g, z)
    probs = ExposureProbabilities.load(a.probs) if a.probs else None
    if a.family == "HT" and probs is None:
        raise UsageError("--probs is required for the HT family")
    if probs is not None and probs.n != g.n:
        raise AdaThreshError(f"probability table covers {probs.n} nodes, graph has {g.n}")
    grid = probs.grid if probs is not None else ThresholdGrid.for_graph(g)
    report = estimate_with_rule(a.rule, y, z, e, probs, grid, a.family, a.bias_mode)
    out = report.to_dict()
    if a.profile:
        out["profile"] = mse_profile(y, z, e, probs, grid, a.family, a.bias_mode,
                                     labels=g.ids).to_dict()
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_experiment(a) -> int:
    from .harness import run_experiment

    cfg = _load(a.config)
    table = run_experiment(cfg, threads=a.threads)
    out_dir = Path(a.out_dir) if a.out_dir else cfg.resolve(cfg["run"]["output_dir"])
    paths = table.write(out_dir, a.name or cfg["run"]["name"])
    print(json.dumps({k: str(v) for k, v in paths.items()}))
    if all(r["replicates"] == 0 for r in table.rows):
        print("error: every cell failed; see the replicate log", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def cmd_oracle(a) -> int:
    from .harness import run_oracle

    cfg = _load(a.config)
    profiles = run_oracle(cfg, a.method, a.draws, a.seed, a.family)
    chunks = []
    for i, (gamma, ratio, prof) in enumerate(profiles):
        text = prof.to_csv()
        lines = text.splitlines()
        head = "gamma_over_beta,gamma," + lines[0]
        body = [f"{ratio!r},{gamma!r},{ln}" for ln in lines[1:]]
        chunks.append(([head] if i == 0 else []) + body)
    _write("\n".join(ln for c in chunks for ln in c) + "\n", a.out)
    return EXIT_OK


COMMANDS = {
    "gen-graph": cmd_gen_graph,
    "probs": cmd_probs,
    "estimate": cmd_estimate,
    "experiment": cmd_experiment,
    "oracle": cmd_oracle,
}


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"adathresh: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"adathresh: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AdaThreshError as exc:
        print(f"adathresh: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"adathresh: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
