"""Bounds on the entries of X = L(z)^{-1}.

Augmentation uses the PSD sandwich ``L_f^{-1} <= X <= L_e^{-1}`` and shortest-path
resistance caps. New designs use the full-graph diagonal, nonnegativity, bridge
resistances, and a sweep of small LPs for the upper bounds.

With the default ``sound`` sweep window every bound holds for every connected
topology the problem admits. The ``incumbent`` window adds the objective cap
``trace(W X) <= trace(W X_f)`` for a known feasible ``X_f``; its upper bounds then
hold only for topologies at least as good as ``X_f``, which includes every optimal
one, and the resulting box is much tighter.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from gridtopo.formulation import BoundBox
from gridtopo.heuristics import greedy_extend, min_reactance_tree, spanning_completion
from gridtopo.network import (PowerNetwork, find_critical_edges, is_connected, reduced_laplacian,
                              shortest_path_reactances)
from gridtopo.problem import DesignProblem, InfeasibleProblem

logger = logging.getLogger(__name__)

LP_PAD = 1e-6  # relative slack added to LP optima so solver tolerance never cuts off X*


class LPSweepError(RuntimeError):
    pass


@dataclass
class TighteningContext:
    Lf_inv: np.ndarray
    Le_inv: Optional[np.ndarray]
    d: Optional[np.ndarray]  # dense shortest paths over existing lines
    dhat: np.ndarray  # dense shortest paths over all candidates
    critical: list  # (edge, near, far) dense triples
    components: dict
    epsilon: float
    Xf: Optional[np.ndarray] = None
    zf: Optional[np.ndarray] = None
    Xr: Optional[np.ndarray] = None
    fallback: bool = False
    lp_count: int = 0
    notes: list = field(default_factory=list)


def _inv(L):
    return np.linalg.inv(L)


def augmentation_bounds(Le: np.ndarray, Lf: np.ndarray) -> BoundBox:
    """Diagonal and off-diagonal intervals implied by L_f^{-1} <= X <= L_e^{-1}."""
    if Le.size and np.linalg.matrix_rank(Le) < Le.shape[0]:
        raise np.linalg.LinAlgError(
            "existing network is disconnected; use new-design bounds (radial or meshed structure)")
    Le_inv, Lf_inv = _inv(Le), _inv(Lf)
    n = Le.shape[0]
    gap = np.clip(np.diag(Le_inv) - np.diag(Lf_inv), 0.0, None)
    root = np.sqrt(np.outer(gap, gap))
    box = BoundBox.empty(n)
    off = ~np.eye(n, dtype=bool)
    lo = np.where(off, Le_inv - root, np.diag(np.diag(Lf_inv)))
    hi = np.where(off, Lf_inv + root, np.diag(np.diag(Le_inv)))
    box.raise_lower(lo, "lemma1")
    box.cap_upper(hi, "lemma1")
    return box


def resistance_lower_bounds(Lf_inv: np.ndarray, d: np.ndarray, epsilon: float = 1e-6) -> np.ndarray:
    """Off-diagonal floors (L_f^-1_ii + L_f^-1_jj - d_ij - eps) / 2; ``d`` on reduced indices.

    Diagonal entries are -inf (no bound).
    """
    diag = np.diag(Lf_inv)
    lo = (diag[:, None] + diag[None, :] - d - epsilon) / 2
    np.fill_diagonal(lo, -np.inf)
    return lo


def naive_upper(network: PowerNetwork) -> float:
    """Sum of the N largest reactances: R_eff(ref, i) never exceeds a spanning-tree path."""
    x = np.sort([e.reactance for e in network.edges])[::-1]
    return float(x[: network.n_reduced].sum())


def naive_bounds(network: PowerNetwork) -> BoundBox:
    n = network.n_reduced
    box = BoundBox.empty(n)
    box.raise_lower(np.zeros((n, n)), "naive")
    box.cap_upper(np.full((n, n), naive_upper(network)), "naive")
    return box


def new_design_bounds(network: PowerNetwork, critical, dhat: np.ndarray, mode: str,
                      Lf_inv: np.ndarray, epsilon: float = 1e-6) -> BoundBox:
    """Lower bounds for a design from scratch; uppers are left infinite."""
    n = network.n_reduced
    box = BoundBox.empty(n)
    box.raise_lower(np.diag(np.diag(Lf_inv)) + np.where(np.eye(n, dtype=bool), 0, -np.inf), "lemma1")
    box.raise_lower(np.where(np.eye(n, dtype=bool), -np.inf, 0.0), "m-matrix")
    cor1 = np.full((n, n), -np.inf)
    cor2 = np.full((n, n), -np.inf)
    for _, near, far in critical:
        if near == 0:
            continue
        i, j = near - 1, far - 1
        cor1[i, j] = cor1[j, i] = (Lf_inv[i, i] + Lf_inv[j, j] - dhat[near, far] - epsilon) / 2
        if mode == "radial":
            cor2[i, j] = cor2[j, i] = dhat[near, 0] - epsilon
    box.raise_lower(cor1, "cor1")
    if mode == "radial":
        box.raise_lower(cor2, "cor2")
    return box


def _sweep_lp_data(n, Wr, Lf_inv, critical, dhat, epsilon, t_upper, t_lower):
    """Shared constraint matrix of the sweep LPs over the upper triangle of X."""
    idx = {}
    for i in range(n):
        for j in range(i, n):
            idx[(i, j)] = len(idx)
    var = lambda i, j: idx[(i, j) if i <= j else (j, i)]  # noqa: E731
    rows, cols, vals, rhs = [], [], [], []
    r = 0

    def add(coeffs, b):
        nonlocal r
        for k, v in coeffs.items():
            rows.append(r)
            cols.append(k)
            vals.append(v)
        rhs.append(b)
        r += 1

    trace = {}
    for (i, j), k in idx.items():
        trace[k] = Wr[i, i] if i == j else Wr[i, j] + Wr[j, i]
    if t_upper is not None:
        add(trace, t_upper)
    if t_lower is not None:
        add({k: -v for k, v in trace.items()}, -t_lower)
    for i in range(n):
        for j in range(i + 1, n):
            rf = Lf_inv[i, i] + Lf_inv[j, j] - 2 * Lf_inv[i, j]
            add({var(i, i): -1.0, var(j, j): -1.0, var(i, j): 2.0}, -rf)
    for _, u, v in critical:
        coeffs = {}
        if u > 0:
            coeffs[var(u - 1, u - 1)] = 1.0
        if v > 0:
            coeffs[var(v - 1, v - 1)] = coeffs.get(var(v - 1, v - 1), 0.0) + 1.0
        if u > 0 and v > 0:
            coeffs[var(u - 1, v - 1)] = -2.0
        add(coeffs, dhat[u, v] + epsilon)
    for i in range(n):
        for j in range(n):
            if i != j:
                add({var(i, j): 1.0, var(i, i): -1.0}, 0.0)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(r, len(idx)))
    return idx, A, np.array(rhs)


def lp_bound_sweep(box: BoundBox, Wr: np.ndarray, Lf_inv: np.ndarray, critical, dhat: np.ndarray,
                   Xf: Optional[np.ndarray], Xr: Optional[np.ndarray] = None, epsilon: float = 1e-6,
                   threads: int = 1, improve_lower: bool = False) -> tuple[BoundBox, int]:
    """Upper-bound every X_ij by an LP; returns the tightened copy and the LP count.

    The LPs carry the objective window (each side only when its matrix is given),
    the full-graph resistance floors, bridge resistance caps, X_ii >= X_ij and the
    current box. Without ``Xf`` the box's finite upper bounds keep the LPs bounded.
    """
    n = box.n
    t_up = None if Xf is None else float(np.trace(Wr @ Xf))
    if t_up is not None:
        t_up += LP_PAD * (1 + abs(t_up))
    t_lo = None if Xr is None else float(np.trace(Wr @ Xr))
    if t_lo is not None:
        t_lo -= LP_PAD * (1 + abs(t_lo))
    idx, A, b = _sweep_lp_data(n, Wr, Lf_inv, critical, dhat, epsilon, t_up, t_lo)
    lb = np.array([box.lower[i, j] for (i, j) in idx])
    ub = np.array([box.upper[i, j] for (i, j) in idx])
    bounds = np.column_stack([np.where(np.isfinite(lb), lb, -np.inf), ub])
    entries = list(idx.items())

    def solve(entry, sign):
        (i, j), k = entry
        c = np.zeros(len(idx))
        c[k] = -sign
        res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
        if res.status == 3:
            raise LPSweepError("sweep LP unbounded: missing trace window or lower bounds")
        if res.status != 0:
            raise LPSweepError(f"sweep LP for X[{i},{j}] failed: {res.message}")
        return sign * -res.fun

    jobs = [(e, 1.0) for e in entries] + ([(e, -1.0) for e in entries] if improve_lower else [])
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            values = list(pool.map(lambda a: solve(*a), jobs))
    else:
        values = [solve(*a) for a in jobs]
    out = box.copy()
    hi = np.full((n, n), np.inf)
    for ((i, j), _), v in zip(entries, values[: len(entries)]):
        hi[i, j] = hi[j, i] = v + LP_PAD * (1 + abs(v))
    out.cap_upper(hi, "lp-sweep")
    if improve_lower:
        lo = np.full((n, n), -np.inf)
        for ((i, j), _), v in zip(entries, values[len(entries):]):
            lo[i, j] = lo[j, i] = v - LP_PAD * (1 + abs(v))
        out.raise_lower(lo, "lp-sweep")
    return out, len(jobs)


def reference_topology(problem: DesignProblem):
    """A cheap feasible selection used as X_f in the sweep's objective window."""
    net = problem.network
    Wr = problem.objective.reduced_weights
    if problem.mode == "radial":
        return min_reactance_tree(net)
    if problem.mode == "meshed":
        tree = min_reactance_tree(net)
        z, _, _ = greedy_extend(net, Wr, tree, np.ones(net.n_edges, bool), problem.budget - net.n_reduced)
        return z
    existing = problem.existing.astype(float)
    new = ~problem.existing
    if is_connected(net, existing):
        z, _, _ = greedy_extend(net, Wr, existing, new, problem.budget)
        return z
    z = spanning_completion(net, existing, new)
    if z is None or int(z.sum() - existing.sum()) > problem.budget:
        raise InfeasibleProblem("infeasible: existing lines plus budget cannot connect the network")
    spent = int(z.sum() - existing.sum())
    z, _, _ = greedy_extend(net, Wr, z, new, problem.budget - spent)
    return z


def tighten(problem: DesignProblem, relaxation_X: Optional[np.ndarray] = None) -> tuple[BoundBox, TighteningContext]:
    """All bounds applicable to the problem's mode, merged entrywise."""
    net = problem.network
    opts = problem.options
    eps = opts.epsilon
    n = net.n_reduced
    Lf = reduced_laplacian(net, np.ones(net.n_edges))
    Lf_inv = _inv(Lf)
    critical, components = find_critical_edges(net)
    dhat = shortest_path_reactances(net)
    ctx = TighteningContext(Lf_inv, None, None, dhat, critical, components, eps, Xr=relaxation_X)

    existing = problem.existing
    use_aug = problem.mode == "augment" and existing.any() and is_connected(net, existing)
    if use_aug:
        Le = reduced_laplacian(net, existing.astype(float))
        box = augmentation_bounds(Le, Lf)
        ctx.Le_inv = _inv(Le)
        ctx.d = shortest_path_reactances(net, np.flatnonzero(existing))
        box.raise_lower(resistance_lower_bounds(Lf_inv, ctx.d[1:, 1:], eps), "lemma2")
        nd = new_design_bounds(net, critical, dhat, "meshed", Lf_inv, eps)
        box.raise_lower(nd.lower, "cor1", mask=nd.lower_src == "cor1")
        box.raise_lower(np.where(np.eye(n, dtype=bool), -np.inf, 0.0), "m-matrix")
    else:
        if problem.mode == "augment":
            ctx.fallback = True
            ctx.notes.append("existing network disconnected: new-design bounds")
        mode = "radial" if problem.mode == "radial" else "meshed"
        box = new_design_bounds(net, critical, dhat, mode, Lf_inv, eps)
    box.cap_upper(np.full((n, n), naive_upper(net)), "naive")
    diag_up = np.diag(box.upper)
    box.cap_upper(np.minimum(diag_up[:, None], diag_up[None, :]) + np.diag(np.full(n, np.inf)), "m-matrix")

    sweep = opts.lp_sweep if opts.lp_sweep is not None else not use_aug
    if sweep and n > 0:
        if opts.sweep_window == "incumbent":
            ctx.zf = reference_topology(problem)
            ctx.Xf = _inv(reduced_laplacian(net, ctx.zf))
        box, ctx.lp_count = lp_bound_sweep(box, problem.objective.reduced_weights, Lf_inv, critical, dhat,
                                           ctx.Xf, relaxation_X, eps, opts.threads)
    bad = box.lower > box.upper
    if bad.any():
        # rounding on degenerate intervals (e.g. every line already existing)
        box.upper = np.where(bad, box.lower, box.upper)
    return box, ctx
