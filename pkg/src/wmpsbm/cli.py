"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 runtime error.  Matrices are
written with commas between columns and semicolons between rows, e.g.
``--Q "8e-3,2e-3;2e-3,8e-3"``.  Sweep settings may come from a TOML file
(``--config``); flags given on the command line override file values.
"""
from __future__ import annotations

import argparse
import contextlib
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import harness
from .errors import DatasetMissing, InvalidParams, WmpError
from .model import SbmParams, build_kernel, kernel_from_mean, theta_bar_closed_form_k2
from .sbm import (SideInfoMode, attach_labels, load_edge_list, load_gml, make_side_info, sample_graph,
                  write_edge_list, write_labels)
from .wmp import WmpOptions, wmp_classify_graph


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def parse_matrix(text: str) -> np.ndarray:
    try:
        rows = [[float(x) for x in r.split(",")] for r in text.strip().split(";") if r.strip()]
        A = np.array(rows, dtype=float)
    except ValueError as exc:
        raise UsageError(f"bad matrix {text!r}: {exc}") from None
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise UsageError(f"matrix {text!r} is not square")
    return A


def parse_list(text, cast=float) -> list:
    if isinstance(text, (list, tuple)):
        return [cast(x) for x in text]
    text = str(text).strip()
    if not text:
        return []
    try:
        return [cast(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad list {text!r}: {exc}") from None


def _params(args) -> SbmParams:
    if args.Q is None or args.N is None:
        raise UsageError("need --N and --Q")
    N = parse_list(args.N, int)
    Q = parse_matrix(args.Q)
    n = args.n if args.n is not None else sum(N)
    return SbmParams(n, len(N), N, Q)


def _fmt(a) -> str:
    return np.array2string(np.asarray(a), precision=6, separator=", ")


# -- subcommands ----------------------------------------------------------------

def cmd_kernel(args, out):
    params = _params(args)
    kern = build_kernel(params)
    print(f"K =\n{_fmt(kern.K)}", file=out)
    print(f"M =\n{_fmt(kern.M)}", file=out)
    print(f"theta = {kern.theta:.6g}", file=out)
    print(f"lambda = {kern.lam:.6g}", file=out)
    print(f"SNR = {kern.snr:.6g}", file=out)
    if kern.w is not None:
        print(f"w = {_fmt(kern.w)}", file=out)
        print(f"equiv_sets = {list(kern.equiv_sets)}", file=out)
    for note in kern.warnings:
        print(f"note: {note}", file=out)
    if params.k == 2:
        tb = theta_bar_closed_form_k2(params)
        print(f"theta_bar (1/4 prefactor) = {tb.quarter:.6g}", file=out)
        print(f"theta_bar (1/2 prefactor) = {tb.half:.6g}", file=out)
    return 0


def cmd_sample_sbm(args, out):
    params = _params(args)
    g = sample_graph(params, args.seed)
    write_edge_list(g, args.out)
    seen = g.degrees() > 0  # isolated nodes cannot appear in an edge list
    if args.labels_out:
        write_labels(g.subgraph(np.flatnonzero(seen)), g.truth[seen], args.labels_out)
    print(f"wrote {int(seen.sum())} nodes, {g.n_edges} edges to {args.out}"
          f" ({g.n - int(seen.sum())} isolated nodes dropped)", file=out)
    return 0


def _load_graph(path):
    p = Path(path)
    return load_gml(p) if p.suffix.lower() == ".gml" else load_edge_list(p)


def cmd_classify(args, out):
    g = _load_graph(args.graph)
    if args.labels:
        g = attach_labels(g, args.labels)
    if g.truth is None or np.any(g.truth < 0):
        raise UsageError("classify needs a label for every node (--labels or GML values)")
    k = int(g.truth.max()) + 1
    mode = SideInfoMode(args.mode, args.delta)
    si = make_side_info(g.truth, mode, k, args.seed)
    if args.N and args.Q:
        kern = build_kernel(_params(args))
    else:
        kern = harness.estimate_kernel(g, si.prior, k)
    opts = WmpOptions(depth=args.depth, uniform_flow=args.uniform_flow, all_revealed=args.all_revealed,
                      exclude_revealed=args.exclude_revealed)
    res = wmp_classify_graph(g, si, kern, args.depth, opts, workers=args.threads)
    s = res.stats
    print(f"nodes={g.n} depth={args.depth} mode={args.mode} delta={args.delta:g} theta={kern.theta:.6g} "
          f"snr={kern.snr:.6g}", file=out)
    print(f"error = {s.overall:.6g}  worst-class = {s.worst:.6g}  uninformed = {s.uninformed_rate:.6g}", file=out)
    for (i, j), v in sorted(s.set_errors.items()):
        print(f"set error S{i} vs S{j} = {v:.6g}", file=out)
    if args.out:
        write_labels(g, res.pred, args.out)
    return 0


SWEEP_KEYS = ("M", "deltas", "depths", "trials", "seed", "mode", "estimators", "engine", "pool_size", "output")


def _sweep_settings(args) -> dict:
    cfg = {}
    if args.config:
        with open(args.config, "rb") as fh:
            cfg = tomllib.load(fh)
        unknown = set(cfg) - set(SWEEP_KEYS)
        if unknown:
            raise UsageError(f"unknown config keys {sorted(unknown)}")
    for key in SWEEP_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def cmd_gw_sweep(args, out):
    cfg = _sweep_settings(args)
    if "M" not in cfg:
        raise UsageError("gw-sweep needs a mean matrix (M in the config or --M)")
    M = parse_matrix(cfg["M"]) if isinstance(cfg["M"], str) else np.asarray(cfg["M"], dtype=float)
    deltas = parse_list(cfg.get("deltas", [0.5]), float)
    depths = parse_list(cfg.get("depths", [4]), int)
    if not deltas or not depths:
        raise UsageError("delta and depth grids must be nonempty")
    estimators = parse_list(cfg.get("estimators", ["wmp", "bp"]), str)
    try:
        config = harness.ExperimentConfig(
            "gw_tree", deltas, depths, int(cfg.get("trials", 1000)), int(cfg.get("seed", 0)),
            cfg.get("mode", "noisy"), estimators, M=M, engine=cfg.get("engine", "auto"),
            pool_size=int(cfg.get("pool_size", 50_000)), workers=args.threads, output=cfg.get("output"))
    except InvalidParams as exc:
        raise UsageError(str(exc)) from None
    echo = {k: cfg[k] for k in SWEEP_KEYS if k in cfg}
    print("# config: " + " ".join(f"{k}={echo[k]!r}" for k in echo), file=out)
    kern = kernel_from_mean(M)
    print(f"# theta={kern.theta:.6g} lambda={kern.lam:.6g} snr={kern.snr:.6g}", file=out)
    rows = []
    for delta in deltas:
        for depth in depths:
            part = harness.gw_monte_carlo(harness.ExperimentConfig(
                "gw_tree", [delta], [depth], config.trials, config.seed, config.mode, estimators, M=M,
                engine=config.engine, pool_size=config.pool_size, workers=config.workers))
            for r in part:
                print(f"delta={delta:g} depth={depth} {r.estimator}: error={r.error:.4f} worst={r.worst:.4f} "
                      f"uninformed={r.uninformed:.4f}", file=out)
            rows += part
    if config.output:
        harness.write_results(config.output, rows, json_mirror=args.json)
    return 0


def cmd_polblogs(args, out):
    config = harness.ExperimentConfig(
        "polblogs", parse_list(args.deltas, float), parse_list(args.depths, int), 1, args.seed, "partial",
        ["amp_uniform_flow", "spectral"], dataset=args.data_dir, workers=args.threads)
    rows = harness.polblogs_experiment(config, repetitions=args.reps)
    for (est, delta, depth), med in harness.median_table(rows).items():
        print(f"{est} delta={delta:g} depth={depth}: median error {100 * med:.2f}%", file=out)
    if args.out:
        harness.write_results(args.out, rows, json_mirror=args.json)
    return 0


def cmd_oracle_check(args, out):
    from .oracles import run_oracle_checks
    passed, total, failures = run_oracle_checks(args.instances, args.seed)
    for f in failures:
        print(f"FAIL {f}", file=out)
    if passed == total:
        print(f"all {total} checks passed", file=out)
        return 0
    print(f"{total - passed} of {total} checks failed", file=out)
    return 2


# -- parser -------------------------------------------------------------------------

def _model_flags(p):
    p.add_argument("--n", type=int, help="node count (defaults to the sum of --N)")
    p.add_argument("--N", help="community sizes, comma separated")
    p.add_argument("--Q", help="edge probability matrix, e.g. '0.05,0.01;0.01,0.03'")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wmpsbm", description="Weighted message passing for SBMs with side information.")
    parser.add_argument("-v", "--verbose", action="store_true", help="print tracebacks on errors")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("kernel", help="print K, M, theta, lambda, SNR and eigenvector weights")
    _model_flags(p)
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("sample-sbm", help="sample an SBM graph to an edge list")
    _model_flags(p)
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out", required=True, help="edge-list output path")
    p.add_argument("--labels-out", help="optional node,label CSV output path")
    p.set_defaults(func=cmd_sample_sbm)

    p = sub.add_parser("classify", help="run WMP on a graph with labels and simulated side information")
    p.add_argument("--graph", required=True, help="edge list or .gml file")
    p.add_argument("--labels", help="node,label CSV with the true labels")
    p.add_argument("--mode", choices=("noisy", "partial"), default="noisy", help="side-information kind")
    p.add_argument("--delta", type=float, required=True, help="side-information strength in (0, 1)")
    p.add_argument("--depth", type=int, default=3, help="tree radius")
    p.add_argument("--seed", type=int, default=0, help="seed for the side information")
    _model_flags(p)
    p.add_argument("--uniform-flow", action="store_true", help="equal flow per boundary node")
    p.add_argument("--all-revealed", action="store_true", help="use every revealed node as a flow sink")
    p.add_argument("--exclude-revealed", action="store_true", help="score only unrevealed nodes")
    p.add_argument("--threads", type=int, default=1, help="worker processes")
    p.add_argument("--out", help="write predictions as node,label CSV")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("gw-sweep", help="Monte Carlo sweep on Galton-Watson trees")
    p.add_argument("--config", help="TOML file with sweep settings")
    p.add_argument("--M", help="mean offspring matrix")
    p.add_argument("--deltas", help="comma separated delta grid")
    p.add_argument("--depths", help="comma separated depth grid")
    p.add_argument("--trials", type=int, help="trees per grid point")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--mode", choices=("noisy", "partial"), help="side-information kind")
    p.add_argument("--estimators", help="subset of wmp,amp_uniform_flow,bp")
    p.add_argument("--engine", choices=("exact", "pool", "auto"), help="tree engine")
    p.add_argument("--pool-size", dest="pool_size", type=int, help="population size for the pool engine")
    p.add_argument("--output", help="CSV results path")
    p.add_argument("--json", action="store_true", help="also write a JSON mirror of the results")
    p.add_argument("--threads", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_gw_sweep)

    p = sub.add_parser("polblogs", help="political-blogs replication (needs the dataset)")
    p.add_argument("--data-dir", help="directory holding polblogs.gml (default: $WMP_DATA_DIR)")
    p.add_argument("--deltas", default="0.1,0.05,0.025", help="comma separated delta grid")
    p.add_argument("--depths", default="1,2,3,4,5", help="comma separated depth grid")
    p.add_argument("--reps", type=int, default=50, help="repetitions per delta")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--threads", type=int, default=1, help="worker processes")
    p.add_argument("--out", help="CSV results path")
    p.add_argument("--json", action="store_true", help="also write a JSON mirror of the results")
    p.set_defaults(func=cmd_polblogs)

    p = sub.add_parser("oracle-check", help="self-test against brute-force and KKT oracles")
    p.add_argument("--instances", type=int, default=100, help="random instances per suite")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.set_defaults(func=cmd_oracle_check)
    return parser


def run(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        with contextlib.redirect_stdout(out):  # --help text
            args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().rstrip())
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be at least 1")
        return args.func(args, out)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(str(exc), file=err)
        return 1
    except DatasetMissing as exc:
        print(f"error: {exc}", file=err)
        return 2
    except (WmpError, OSError, ValueError) as exc:
        if "args" in locals() and getattr(args, "verbose", False):
            raise
        print(f"error: {exc}", file=err)
        return 2


def main() -> None:
    sys.exit(run())
