"""Brute-force ground truth for small instances and end-to-end solution checks.

Deliberately shares nothing with the MILP path beyond the Laplacian primitives.
"""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from gridtopo.dynamics import closed_form_objective
from gridtopo.kernels import connected_masks
from gridtopo.network import incidence_matrix, is_connected, reduced_laplacian
from gridtopo.problem import DesignProblem

logger = logging.getLogger(__name__)

HARD_CAP = 22
WARN_ABOVE = 16
MAX_RANKED = 10_000


@dataclass
class EnumerationReport:
    best_selection: Optional[np.ndarray]
    best_objective: float
    count: int
    ranked: list = field(default_factory=list)  # (objective, selected edge indices)

    @property
    def feasible(self) -> bool:
        return self.best_selection is not None


def _contract(n_nodes, eu, ev, fixed):
    """Component label per node after merging the endpoints of every fixed line."""
    parent = list(range(n_nodes))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for k in np.flatnonzero(fixed):
        parent[find(int(eu[k]))] = find(int(ev[k]))
    roots = sorted({find(v) for v in range(n_nodes)})
    label = {r: i for i, r in enumerate(roots)}
    return np.array([label[find(v)] for v in range(n_nodes)], dtype=np.int64), len(roots)


def feasible_masks(problem: DesignProblem) -> tuple[np.ndarray, np.ndarray]:
    """Bitmasks over the free lines (bit b = ``free[b]``) of every admissible connected selection.

    Fixed lines are contracted first, so only free lines occupy bits.
    """
    net = problem.network
    fixed = problem.existing
    free = np.flatnonzero(~fixed)
    if len(free) > HARD_CAP:
        raise ValueError(f"oracle limited to {HARD_CAP} free lines, got {len(free)}")
    if len(free) > WARN_ABOVE:
        warnings.warn(f"enumerating 2^{len(free)} selections", stacklevel=3)
    eu, ev = net.endpoints()
    comp, n_comp = _contract(net.n_nodes, eu, ev, fixed)
    n_fixed = int(fixed.sum())
    lo = max(0, problem.min_edges - n_fixed)
    hi = problem.total_budget - n_fixed
    if hi < 0:
        return np.zeros(0, dtype=np.uint64), free
    masks = connected_masks(n_comp, comp[eu[free]], comp[ev[free]], 0, (1 << len(free)) - 1, lo, hi)
    return masks, free


def feasible_selections(problem: DesignProblem) -> np.ndarray:
    """0/1 matrix, one row per admissible connected selection (uint8)."""
    net = problem.network
    masks, free = feasible_masks(problem)
    Z = np.zeros((len(masks), net.n_edges), dtype=np.uint8)
    Z[:, problem.existing] = 1
    if len(free):
        Z[:, free] = (masks[:, None] >> np.arange(len(free), dtype=np.uint64)) & np.uint64(1)
    return Z


def _objectives(problem: DesignProblem, Z: np.ndarray) -> np.ndarray:
    a = incidence_matrix(problem.network)
    b = problem.network.susceptances
    Wr = problem.objective.reduced_weights
    outer = (np.einsum("ei,ej->eij", a, a) * b[:, None, None]).reshape(len(b), -1)
    n = a.shape[1]
    out = np.empty(len(Z))
    chunk = 4096
    for s in range(0, len(Z), chunk):
        L = (Z[s:s + chunk].astype(float) @ outer).reshape(-1, n, n)
        sol = np.linalg.solve(L, np.broadcast_to(Wr, L.shape))
        out[s:s + chunk] = np.trace(sol, axis1=1, axis2=2)
    return out


def _edge_key(row) -> tuple:
    return tuple(int(k) for k in np.flatnonzero(row))


def enumerate_optimal(problem: DesignProblem, keep_all: bool = False,
                      max_ranked: int = MAX_RANKED) -> EnumerationReport:
    """Exact optimum of trace(W_r L(z)^{-1}) over every admissible connected selection."""
    net = problem.network
    Z = feasible_selections(problem)
    if len(Z) == 0:
        return EnumerationReport(None, float("inf"), 0)
    vals = np.zeros(len(Z)) if net.n_reduced == 0 else _objectives(problem, Z)
    scale = max(1.0, float(np.max(np.abs(vals))))
    # order by (objective, lexicographic edge tuple); objectives equal to 1e-12 count as ties
    rounded = np.round(vals / scale, 12)
    order = np.argsort(rounded, kind="stable")
    take = min(len(Z), max_ranked if keep_all else 1)
    edge = rounded[order[take - 1]]
    take = int(np.searchsorted(rounded[order], edge, side="right"))
    head = sorted(order[:take], key=lambda r: (rounded[r], _edge_key(Z[r])))
    best = head[0]
    ranked = []
    if keep_all:
        ranked = [(float(vals[r]), _edge_key(Z[r])) for r in head[:max_ranked]]
    z = Z[best].astype(float)
    # the winner is re-scored with the scalar closed form so both paths agree bit for bit
    value = closed_form_objective(problem.objective.reduced_weights, reduced_laplacian(net, z))
    return EnumerationReport(z, value, len(Z), ranked)


def all_feasible(problem: DesignProblem):
    """Yield (selection, X = L(z)^{-1}, objective) for every admissible connected selection."""
    net = problem.network
    Wr = problem.objective.reduced_weights
    for row in feasible_selections(problem):
        z = row.astype(float)
        X = np.linalg.inv(reduced_laplacian(net, z))
        yield z, X, float(np.trace(Wr @ X))


def verify_solution(problem: DesignProblem, selection, X=None, bounds=None, objective=None,
                    residual_tol: float = 1e-7, objective_tol: float = 1e-9) -> dict:
    """Independent checks of a reported solution; failures are listed, never raised."""
    net = problem.network
    z = np.asarray(selection, dtype=float)
    rec: dict = {"failures": []}
    binary = bool(np.all((np.abs(z) < 1e-9) | (np.abs(z - 1) < 1e-9)))
    rec["binary"] = binary
    zb = np.round(z)
    count = int(zb.sum())
    rec["lines"] = count
    rec["budget_ok"] = problem.min_edges <= count <= problem.total_budget
    if problem.mode == "augment":
        rec["budget_ok"] = rec["budget_ok"] and int(zb[~problem.existing].sum()) <= problem.budget
    rec["fixed_ok"] = bool(np.all(zb[problem.existing] == 1))
    rec["connected"] = is_connected(net, zb)
    L = reduced_laplacian(net, zb)
    if X is None and rec["connected"]:
        X = np.linalg.inv(L)
    if X is not None:
        X = np.asarray(X, dtype=float)
        rec["identity_residual"] = float(np.max(np.abs(L @ X - np.eye(net.n_reduced)), initial=0.0))
        rec["residual_ok"] = rec["identity_residual"] <= residual_tol
        recomputed = float(np.trace(problem.objective.reduced_weights @ X))
        if rec["connected"]:
            recomputed = float(np.trace(problem.objective.reduced_weights @ np.linalg.inv(L)))
        rec["objective_recomputed"] = recomputed
        if objective is not None:
            rec["objective_match"] = abs(objective - recomputed) <= objective_tol * max(1.0, abs(recomputed))
        if bounds is not None:
            rec["in_bounds"] = bounds.contains(X, 1e-9)
    else:
        rec["residual_ok"] = False
    for key in ("binary", "budget_ok", "fixed_ok", "connected", "residual_ok", "objective_match", "in_bounds"):
        if key in rec and not rec[key]:
            rec["failures"].append(key)
    rec["passed"] = not rec["failures"]
    return rec


def write_ranked_csv(report: EnumerationReport, problem: DesignProblem, path) -> None:
    net = problem.network
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "objective", "lines"])
        for r, (obj, sel) in enumerate(report.ranked, 1):
            w.writerow([r, f"{obj:.12g}", " ".join(f"{u}-{v}" for u, v in map(net.edge_ids, sel))])
