"""Command line driver: ``gridtopo {design,augment,evaluate,greedy,oracle,bounds}``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from gridtopo import __version__
from gridtopo.document import DocumentError, load
from gridtopo.dynamics import (GramianError, closed_form_objective, kron_reduce, observability_gramian,
                               state_matrices)
from gridtopo.engine import _jsonable, greedy_augment, solve, supermodularity_for
from gridtopo.kernels import BACKEND
from gridtopo.network import (NetworkError, full_laplacian, is_connected, reduced_laplacian,
                              selected_pairs, selection_from_edges)
from gridtopo.oracle import enumerate_optimal, write_ranked_csv
from gridtopo.problem import DesignProblem, InfeasibleProblem, SolveOptions
from gridtopo.tightening import tighten

logger = logging.getLogger("gridtopo")

EXIT_OK, EXIT_ERROR, EXIT_INCUMBENT = 0, 1, 2
TIMING_KEYS = ("seconds_bounds", "seconds_milp", "seconds_total")


def _positive(kind):
    def conv(text):
        v = kind(text)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return conv


def _common(p: argparse.ArgumentParser, modes=("radial", "meshed", "augment"), default_mode=None):
    p.add_argument("network", type=Path, help="NetworkDocument JSON file")
    p.add_argument("--mode", choices=modes, default=default_mode or modes[0])
    p.add_argument("--budget", type=int, default=None,
                   help="total lines (meshed) or additional lines (augment)")
    p.add_argument("--epsilon", type=_positive(float), default=1e-6)
    p.add_argument("--gamma", type=float, default=-0.95)
    p.add_argument("--sparsity-k", type=_positive(int), default=1)
    p.add_argument("--max-cuts", type=int, default=10)
    p.add_argument("--cut-budget", type=int, default=200)
    p.add_argument("--rounds", type=int, default=5)
    p.add_argument("--dense-cuts", action="store_true", help="emit the dense cut next to each sparse one")
    p.add_argument("--random-cuts", type=int, default=0)
    p.add_argument("--lp-sweep", dest="lp_sweep", action="store_true", default=None)
    p.add_argument("--no-lp-sweep", dest="lp_sweep", action="store_false")
    p.add_argument("--sweep-window", choices=("sound", "incumbent"), default="sound",
                   help="incumbent: cap trace(W X) by a heuristic topology (tighter, optimal-only)")
    p.add_argument("--gap", type=_positive(float), default=1e-6)
    p.add_argument("--time-limit", type=_positive(float), default=None)
    p.add_argument("--threads", type=_positive(int), default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backend", choices=("highs",), default="highs")
    p.add_argument("--out", type=Path, default=None, help="run artifact path (stdout when omitted)")
    p.add_argument("--csv", type=Path, default=None, help="optional CSV table")
    p.add_argument("--lp-export", type=Path, default=None, help="write the assembled model in LP format")
    p.add_argument("--timing", action="store_true", help="include wall-clock timings in the artifact")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gridtopo", description="H2-optimal power grid topology design")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("design", help="design a radial or meshed network"), ("radial", "meshed"))
    _common(sub.add_parser("augment", help="add lines to the existing network"), ("augment",))
    ev = sub.add_parser("evaluate", help="objective values of a given topology")
    ev.add_argument("network", type=Path)
    ev.add_argument("selection", type=Path, nargs="?", default=None,
                    help="JSON with 'edges': [[from, to], ...]; defaults to existing lines, else all")
    ev.add_argument("--out", type=Path, default=None)
    ev.add_argument("-v", "--verbose", action="store_true")
    _common(sub.add_parser("greedy", help="greedy augmentation"), ("augment",))
    _common(sub.add_parser("oracle", help="brute-force enumeration"))
    _common(sub.add_parser("bounds", help="bound box with per-entry provenance"))
    return ap


def _options(args) -> SolveOptions:
    return SolveOptions(epsilon=args.epsilon, gamma=args.gamma, sparsity_k=args.sparsity_k,
                        max_cuts=args.max_cuts, cut_budget=args.cut_budget, rounds=args.rounds,
                        dense_cuts=args.dense_cuts, random_cuts=args.random_cuts, gap=args.gap,
                        time_limit=args.time_limit, threads=args.threads, lp_sweep=args.lp_sweep,
                        sweep_window=args.sweep_window, seed=args.seed)


def _problem(doc, args) -> DesignProblem:
    budget = args.budget
    if args.mode == "augment" and budget is None:
        raise ValueError("--budget (additional lines) is required for augmentation")
    return DesignProblem(doc.network, doc.objective, args.mode, budget, _options(args))


def _config(args) -> dict:
    skip = {"network", "out", "csv", "lp_export", "verbose", "selection", "timing"}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k not in skip}


def _emit(report: dict, args) -> None:
    text = json.dumps(_jsonable(report), indent=2, sort_keys=True)
    if getattr(args, "out", None):
        args.out.write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _strip_timing(stats: dict) -> None:
    for k in TIMING_KEYS:
        stats.pop(k, None)


def _base_report(args, doc) -> dict:
    return {"gridtopo_version": __version__, "command": args.command, "network": doc.name or str(args.network),
            "kernels": BACKEND, "config": _config(args)}


def cmd_design(args) -> int:
    doc = load(args.network)
    problem = _problem(doc, args)
    if args.lp_export:
        from gridtopo.formulation import assemble
        box, ctx = tighten(problem)
        model = assemble(problem, box, critical=ctx.critical, dhat=ctx.dhat, Lf_inv=ctx.Lf_inv)
        args.lp_export.write_text(model.to_lp())
    sol = solve(problem)
    report = _base_report(args, doc)
    report["result"] = sol.to_dict(doc.network)
    if not args.timing:
        _strip_timing(report["result"]["statistics"])
    if args.csv:
        _bounds_csv(report["result"].get("bounds", []), args.csv)
    _emit(report, args)
    print(f"{sol.status}: objective {sol.objective:.10g} with {len(sol.edges)} lines", file=sys.stderr)
    return EXIT_OK if sol.optimal else EXIT_INCUMBENT


cmd_augment = cmd_design


def cmd_greedy(args) -> int:
    doc = load(args.network)
    problem = _problem(doc, args)
    sol = greedy_augment(problem)
    report = _base_report(args, doc)
    report["result"] = sol.to_dict(doc.network)
    sm = supermodularity_for(problem)
    report["supermodularity"] = {"holds": sm.holds, "margin": sm.margin, "triples": sm.n_triples,
                                 "witness": sm.witness}
    _emit(report, args)
    print(f"greedy objective {sol.objective:.10g}", file=sys.stderr)
    return EXIT_OK


def cmd_oracle(args) -> int:
    doc = load(args.network)
    problem = _problem(doc, args)
    rep = enumerate_optimal(problem, keep_all=True)
    report = _base_report(args, doc)
    net = doc.network
    if not rep.feasible:
        report["result"] = {"status": "infeasible", "count": 0}
        _emit(report, args)
        print("infeasible: no connected selection satisfies the budget", file=sys.stderr)
        return EXIT_ERROR
    report["result"] = {
        "status": "optimal", "objective": rep.best_objective, "count": rep.count,
        "edges": [list(p) for p in selected_pairs(net, rep.best_selection)],
        "ranked": [{"objective": o, "edges": [list(net.edge_ids(k)) for k in sel]} for o, sel in rep.ranked],
    }
    if args.csv:
        write_ranked_csv(rep, problem, args.csv)
    _emit(report, args)
    print(f"oracle optimum {rep.best_objective:.10g} over {rep.count} selections", file=sys.stderr)
    return EXIT_OK


def _bounds_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["i", "j", "lower", "upper", "lower_source", "upper_source"])
        w.writeheader()
        for r in rows:
            w.writerow(r)


def cmd_bounds(args) -> int:
    doc = load(args.network)
    problem = _problem(doc, args)
    box, ctx = tighten(problem)
    labels = doc.network.ids[1:]
    rows = box.report(labels)
    report = _base_report(args, doc)
    report["result"] = {"bounds": rows, "sources": box.source_counts(), "fallback": ctx.fallback,
                        "notes": ctx.notes, "lp_count": ctx.lp_count,
                        "critical_edges": [list(doc.network.edge_ids(k)) for k, _, _ in ctx.critical]}
    if args.csv:
        _bounds_csv(rows, args.csv)
    _emit(report, args)
    return EXIT_OK


def _selection(doc, path):
    net = doc.network
    if path is None:
        ex = net.existing_mask
        return ex.astype(float) if ex.any() else np.ones(net.n_edges)
    data = json.loads(Path(path).read_text())
    pairs = data["edges"] if isinstance(data, dict) else data
    return selection_from_edges(net, [tuple(p) for p in pairs])


def kron_objective(network, selection, objective) -> float:
    """trace(W_SS X_SS) from the Kron-reduced Laplacian over machine nodes."""
    mask = network.machine_mask
    if not mask[0]:
        raise ValueError("reference node must be a machine for the Kron-reduced objective")
    keep = np.flatnonzero(mask)
    Lk = kron_reduce(full_laplacian(network, selection), keep)
    W = objective.W[np.ix_(keep, keep)]
    return closed_form_objective(W[1:, 1:], Lk[1:, 1:])


def cmd_evaluate(args) -> int:
    doc = load(args.network)
    net, obj = doc.network, doc.objective
    z = _selection(doc, args.selection)
    if not is_connected(net, z):
        raise ValueError("selection does not connect every node (disconnected topology)")
    out = {"edges": [list(p) for p in selected_pairs(net, z)]}
    if obj.has_frequency_weights:
        out["trace_objective"] = None
        out["closed_form"] = "n/a (frequency weights)"
    else:
        out["trace_objective"] = closed_form_objective(obj.reduced_weights, reduced_laplacian(net, z))
    try:
        g = observability_gramian(state_matrices(net, z, obj))
        out["h2_squared"] = g.h2_squared
        out["gramian_residual"] = g.residual
    except GramianError as exc:
        out["h2_squared"] = None
        out["gramian_error"] = str(exc)
    if out.get("trace_objective") and out.get("h2_squared") is not None:
        out["ratio"] = out["h2_squared"] / out["trace_objective"]
    if not net.machine_mask.all() and not obj.has_frequency_weights:
        out["kron_objective"] = kron_objective(net, z, obj)
    report = {"gridtopo_version": __version__, "command": "evaluate", "network": doc.name or str(args.network),
              "result": out}
    _emit(report, args)
    return EXIT_OK


COMMANDS = {"design": cmd_design, "augment": cmd_augment, "evaluate": cmd_evaluate,
            "greedy": cmd_greedy, "oracle": cmd_oracle, "bounds": cmd_bounds}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (DocumentError, NetworkError, InfeasibleProblem, GramianError, ValueError,
            FileNotFoundError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


__all__ = ["main", "build_parser", "kron_objective"]

if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
