"""Solve orchestration: bounds, model, cut rounds, integer solve, polishing, verification.

Also hosts the greedy augmentation heuristic, the supermodularity checker, the
greedy guarantee ratio, decomposition at the reference node and node edits.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from gridtopo.backend import MilpBackend, default_backend
from gridtopo.cuts import CutPool, cut_to_inequality, separate
from gridtopo.dynamics import GramianError, StabilityObjective, closed_form_objective, h2_squared
from gridtopo.formulation import BoundBox, MilpModel, assemble
from gridtopo.heuristics import greedy_extend
from gridtopo.network import (Node, PowerNetwork, build_network, is_connected, reduced_laplacian,
                              selected_pairs)
from gridtopo.oracle import verify_solution
from gridtopo.problem import DesignProblem, InfeasibleProblem, SolveOptions
from gridtopo.tightening import naive_bounds, tighten

logger = logging.getLogger(__name__)

__all__ = [
    "DesignProblem", "SolveOptions", "TopologySolution", "VerificationError", "solve",
    "relaxation_objective", "greedy_augment", "supermodularity_check", "SupermodularityReport",
    "greedy_guarantee", "GreedyGuarantee", "parallel_decomposition", "SubProblem",
    "solve_decomposed", "node_change",
]

IDENTITY_TOL = 1e-7


class VerificationError(RuntimeError):
    pass


@dataclass
class TopologySolution:
    selection: np.ndarray
    edges: list  # external (from, to) pairs
    objective: float
    status: str  # optimal | time_limit | heuristic
    X: np.ndarray
    gap: float = 0.0
    h2_squared: Optional[float] = None
    statistics: dict = field(default_factory=dict)
    verification: dict = field(default_factory=dict)
    bounds: Optional[BoundBox] = None
    cut_log: list = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def to_dict(self, network: PowerNetwork) -> dict:
        labels = network.ids[1:]
        out = {
            "status": self.status,
            "objective": self.objective,
            "h2_squared": self.h2_squared,
            "gap": None if self.gap is None or math.isnan(self.gap) else self.gap,
            "edges": [list(p) for p in self.edges],
            "selection": [int(round(v)) for v in self.selection],
            "statistics": _jsonable(self.statistics),
            "verification": _jsonable(self.verification),
            "cut_log": _jsonable(self.cut_log),
        }
        if self.bounds is not None:
            out["bounds"] = _jsonable(self.bounds.report(labels))
        return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _check_objective(problem: DesignProblem):
    if problem.objective.has_frequency_weights:
        raise ValueError("frequency weights have no trace form; evaluate such objectives with the Gramian")


def _mccormick_gap(model: MilpModel, x: np.ndarray) -> float:
    lay = model.layout
    gaps = [abs(x[lay.y(ell, i, j)] - x[lay.z(ell)] * x[lay.x(i, j)]) for ell, i, j in lay.y_rows]
    return float(max(gaps, default=0.0))


def _polish(model: MilpModel, z: np.ndarray, backend: MilpBackend) -> Optional[np.ndarray]:
    """Re-solve with z fixed at its rounded value and tight tolerances."""
    m = model.relaxed()
    nz = model.layout.n_z
    m.lb = m.lb.copy()
    m.ub = m.ub.copy()
    m.lb[:nz] = m.ub[:nz] = z
    res = backend.solve_lp(m, tight=True)
    return res.x if res.has_solution else None


def _pack(model: MilpModel, z: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Full variable vector for a binary z and its exact inverse."""
    lay = model.layout
    x = np.zeros(model.n_vars)
    n = X.shape[0]
    for ell in range(lay.n_z):
        x[lay.z(ell)] = z[ell]
    for i in range(n):
        for j in range(i, n):
            x[lay.x(i, j)] = X[i, j]
    for ell, i, j in lay.y_rows:
        x[lay.y(ell, i, j)] = z[ell] * X[min(i, j), max(i, j)]
    return x


def _greedy_incumbent(problem: DesignProblem):
    """(selection, objective) of the greedy augmentation, or None outside augment mode."""
    if problem.mode != "augment" or not is_connected(problem.network, problem.existing.astype(float)):
        return None
    Wr = problem.objective.reduced_weights
    z, _, _ = greedy_extend(problem.network, Wr, problem.existing.astype(float), ~problem.existing,
                            problem.budget)
    return z, closed_form_objective(Wr, reduced_laplacian(problem.network, z))


def _gap(objective: float, dual_bound: float) -> float:
    if not math.isfinite(dual_bound):
        return float("nan")
    return max(0.0, objective - dual_bound) / max(abs(objective), 1e-12)


def _report_h2(problem: DesignProblem, z) -> Optional[float]:
    try:
        return h2_squared(problem.network, z, problem.objective)
    except (GramianError, ValueError, np.linalg.LinAlgError) as exc:
        logger.info("H2 evaluation skipped: %s", exc)
        return None


def _trivial(problem: DesignProblem) -> TopologySolution:
    net = problem.network
    z = np.ones(net.n_edges) if problem.mode != "radial" else np.zeros(net.n_edges)
    return TopologySolution(z, selected_pairs(net, z), 0.0, "optimal", np.zeros((0, 0)))


def cut_rounds(problem: DesignProblem, model: MilpModel, backend: MilpBackend,
               rng: Optional[np.random.Generator] = None):
    """Separation rounds at the continuous relaxation; mutates ``model``.

    Returns ``(pool, relaxation_history)``; the history holds the relaxation
    objective before each round and once more after the last accepted cuts.
    """
    opts = problem.options
    pool = CutPool(budget=opts.cut_budget)
    history = []
    rng = rng or np.random.default_rng(opts.seed)
    for rnd in range(opts.rounds + 1):
        lp = backend.solve_lp(model.relaxed())
        if lp.status == "infeasible":
            raise InfeasibleProblem("infeasible: continuous relaxation has no solution")
        if not lp.has_solution:
            logger.warning("relaxation failed in round %d: %s", rnd, lp.message)
            break
        history.append(lp.objective)
        if rnd == opts.rounds or pool.remaining <= 0:
            break
        X = model.layout.unpack_x(lp.x)
        z = model.layout.unpack_z(lp.x)
        cands = separate(X, z, problem.network, opts.gamma, opts.sparsity_k,
                         min(opts.max_cuts, pool.remaining), opts.dense_cuts, opts.random_cuts, rng)
        new = []
        for cand in cands:
            con = cut_to_inequality(cand, problem.network, model.layout)
            if pool.offer(cand, con, rnd):
                new.append(con)
        if not new:
            break
        model.add_constraints(new, cut=True)
    return pool, history


def solve(problem: DesignProblem, backend: Optional[MilpBackend] = None, *,
          compute_h2: bool = True) -> TopologySolution:
    """Optimal topology of the Tightened MILP, verified by resubstitution."""
    _check_objective(problem)
    backend = backend or default_backend()
    opts = problem.options
    net = problem.network
    t0 = time.perf_counter()
    if net.n_reduced == 0:
        return _trivial(problem)

    box, ctx = tighten(problem)
    t_bounds = time.perf_counter() - t0
    model = assemble(problem, box, critical=ctx.critical, dhat=ctx.dhat, Lf_inv=ctx.Lf_inv)
    pool, history = cut_rounds(problem, model, backend)

    remaining = None
    if opts.time_limit:
        remaining = max(1.0, opts.time_limit - (time.perf_counter() - t0))
    res = backend.solve_milp(model, gap=opts.gap, time_limit=remaining)
    if res.status == "infeasible":
        raise InfeasibleProblem("infeasible: no connected topology satisfies the budget")
    timed_out = res.status == "time_limit" or (not res.has_solution and opts.time_limit is not None)
    heuristic = _greedy_incumbent(problem) if timed_out else None
    if not res.has_solution and heuristic is None:
        raise RuntimeError(f"MILP backend failed: {res.message}")

    incumbent_source = "milp"
    Wr = problem.objective.reduced_weights
    if res.has_solution:
        z = np.round(model.layout.unpack_z(res.x))
        polished = _polish(model, z, backend)
        x = polished if polished is not None else res.x
        X = model.layout.unpack_x(x)
        objective = float(np.trace(Wr @ X))
    if heuristic is not None and (not res.has_solution or heuristic[1] < objective - 1e-12 * abs(objective)):
        # a time-limited search can end above the greedy point; report the better incumbent
        incumbent_source = "greedy"
        z = heuristic[0]
        polished = _polish(model, z, backend)
        x = polished if polished is not None else _pack(model, z, np.linalg.inv(reduced_laplacian(net, z)))
        X = model.layout.unpack_x(x)
        objective = float(np.trace(Wr @ X))
    status = "optimal" if res.status == "optimal" else "time_limit"

    verification = verify_solution(problem, z, X, bounds=box, objective=objective)
    verification["mccormick_gap"] = _mccormick_gap(model, x)
    verification["raw_mccormick_gap"] = _mccormick_gap(model, res.x if incumbent_source == "milp" else x)
    verification["polished"] = polished is not None
    if not verification["passed"]:
        raise VerificationError(f"solution failed resubstitution: {verification['failures']}")

    stats = {
        "mode": problem.mode,
        "budget": problem.budget,
        "n_vars": model.n_vars,
        "n_constraints": len(model.constraints),
        "n_binaries": int(model.integrality.sum()),
        "fixed_edges": len(model.fixed_edges),
        "critical_edges": len(ctx.critical),
        "bound_sources": box.source_counts(),
        "bound_fallback": ctx.fallback,
        "bound_notes": ctx.notes,
        "lp_sweep_count": ctx.lp_count,
        "cuts_offered": len(pool.log),
        "cuts_added": len(pool.accepted),
        "cut_rounds": max(0, len(history) - 1),
        "relaxation_history": history,
        "milp_objective": res.objective,
        "incumbent_source": incumbent_source,
        "dual_bound": res.dual_bound,
        "node_count": res.node_count,
        "seconds_bounds": t_bounds,
        "seconds_milp": res.seconds,
        "seconds_total": time.perf_counter() - t0,
        "fingerprint": model.fingerprint(),
    }
    h2 = _report_h2(problem, z) if compute_h2 else None
    return TopologySolution(z, selected_pairs(net, z), objective, status, X,
                            gap=0.0 if status == "optimal" else _gap(objective, res.dual_bound), h2_squared=h2,
                            statistics=stats, verification=verification, bounds=box, cut_log=pool.log)


def relaxation_objective(problem: DesignProblem, *, naive: bool = False,
                         backend: Optional[MilpBackend] = None, with_milp: bool = False):
    """Continuous-relaxation objective of the model under tightened or naive bounds.

    Both variants share every constraint except the bound box. With ``with_milp``
    the integer solve result is returned as well.
    """
    _check_objective(problem)
    backend = backend or default_backend()
    box, ctx = tighten(problem)
    if naive:
        box = naive_bounds(problem.network)
    model = assemble(problem, box, critical=ctx.critical, dhat=ctx.dhat, Lf_inv=ctx.Lf_inv)
    lp = backend.solve_lp(model.relaxed())
    if not with_milp:
        return lp.objective
    return lp.objective, backend.solve_milp(model, gap=problem.options.gap,
                                            time_limit=problem.options.time_limit)


def greedy_augment(problem: DesignProblem) -> TopologySolution:
    """Add candidate lines one at a time, each the largest immediate improvement."""
    _check_objective(problem)
    if problem.mode != "augment":
        raise ValueError("greedy augmentation needs mode 'augment'")
    net = problem.network
    base = problem.existing.astype(float)
    if not is_connected(net, base):
        raise ValueError("greedy augmentation needs a connected existing network")
    Wr = problem.objective.reduced_weights
    z, value, added = greedy_extend(net, Wr, base, ~problem.existing, problem.budget)
    X = np.linalg.inv(reduced_laplacian(net, z))
    objective = closed_form_objective(Wr, reduced_laplacian(net, z))
    ver = verify_solution(problem, z, X, objective=objective)
    stats = {"mode": "augment", "budget": problem.budget, "added_order": [net.edge_ids(k) for k in added],
             "rank_one_objective": value}
    return TopologySolution(z, selected_pairs(net, z), objective, "heuristic", X, gap=float("nan"),
                            h2_squared=_report_h2(problem, z), statistics=stats, verification=ver)


@dataclass
class SupermodularityReport:
    holds: bool
    margin: float  # smallest left-hand side over all evaluated triples
    n_triples: int
    witness: Optional[dict] = None  # first failing triple
    triples: list = field(default_factory=list)


def supermodularity_check(Le: np.ndarray, W: np.ndarray, candidates: Sequence[tuple[int, int]],
                          keep_triples: bool = False) -> SupermodularityReport:
    """Sufficient conditions for trace(W_r L^{-1}) to be supermodular in edge additions.

    ``Le`` is the reduced Laplacian of the existing lines, ``W`` the full angle-weight
    Laplacian and ``candidates`` dense ``(i, j)`` pairs with ``i < j``. Slot 0 (the
    reference) is grounded, so its row of the inverse is zero. Every unordered pair of
    distinct candidates is checked against every weight edge ``(k, l)``, ``k < l``,
    ``w_kl > 0``. The three quantities are symmetric in the order of the two candidates.
    """
    n = W.shape[0]
    G = np.zeros((n, n))
    G[1:, 1:] = np.linalg.inv(Le)
    weights = [(k, l) for k in range(n) for l in range(k + 1, n) if -W[k, l] > 0]
    margin = math.inf
    witness = None
    count = 0
    kept = []
    cands = list(candidates)
    for p in range(len(cands)):
        i, j = cands[p]
        for q in range(p + 1, len(cands)):
            m, nn = cands[q]
            c3 = (G[i, m] - G[i, nn]) - (G[j, m] - G[j, nn])
            for k, l in weights:
                c1 = (G[i, k] - G[i, l]) - (G[j, k] - G[j, l])
                c2 = (G[m, k] - G[m, l]) - (G[nn, k] - G[nn, l])
                low = min(c1, c2, c3)
                count += 1
                rec = {"edge_a": (i, j), "edge_b": (m, nn), "weight_edge": (k, l), "values": (c1, c2, c3)}
                if keep_triples:
                    kept.append(rec)
                if low < margin:
                    margin = low
                if low <= 0 and witness is None:
                    witness = rec
    return SupermodularityReport(witness is None, margin, count, witness, kept)


def supermodularity_for(problem: DesignProblem, **kw) -> SupermodularityReport:
    net = problem.network
    Le = reduced_laplacian(net, problem.existing.astype(float))
    cands = [(e.i, e.j) for k, e in enumerate(net.edges) if not problem.existing[k]]
    return supermodularity_check(Le, problem.objective.W, cands, **kw)


@dataclass
class GreedyGuarantee:
    ratio: float
    holds: bool
    defined: bool


def greedy_guarantee(f_empty: float, f_greedy: float, f_opt: float, tol: float = 1e-9) -> GreedyGuarantee:
    """(f_greedy - f_opt) / (f_empty - f_opt) and whether it is at most 1/e."""
    denom = f_empty - f_opt
    if abs(denom) <= tol * max(1.0, abs(f_empty)):
        return GreedyGuarantee(0.0, True, False)
    ratio = (f_greedy - f_opt) / denom
    return GreedyGuarantee(ratio, ratio <= 1 / math.e + tol, True)


@dataclass
class SubProblem:
    problem: DesignProblem
    nodes: tuple  # dense parent indices, reference first
    edge_map: tuple  # sub edge index -> parent edge index


def _components_without_reference(net: PowerNetwork) -> list[list[int]]:
    parent = list(range(net.n_nodes))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e in net.edges:
        if e.i != 0:
            parent[find(e.i)] = find(e.j)
    groups: dict[int, list[int]] = {}
    for v in range(1, net.n_nodes):
        groups.setdefault(find(v), []).append(v)
    return sorted(groups.values())


def parallel_decomposition(problem: DesignProblem) -> list[SubProblem]:
    """Split at the reference node: components of the candidate graph without it are independent."""
    net = problem.network
    comps = _components_without_reference(net)
    if len(comps) <= 1:
        return [SubProblem(problem, tuple(range(net.n_nodes)), tuple(range(net.n_edges)))]
    subs = []
    for comp in comps:
        dense = [0] + comp
        members = set(dense)
        emap = [k for k, e in enumerate(net.edges) if e.i in members and e.j in members]
        nodes = [net.nodes[v] for v in dense]
        edges = [(net.nodes[net.edges[k].i].id, net.nodes[net.edges[k].j].id, net.edges[k].susceptance,
                  net.edges[k].existing) for k in emap]
        sub_net = build_network(nodes, edges, net.reference)
        # build_network keeps the given node order and sorts edges by dense pair; map back
        order = [sub_net.edge_index(*net.edge_ids(k)) for k in emap]
        emap = [emap[order.index(s)] for s in range(len(emap))]
        objective = problem.objective.restrict(dense)
        if problem.mode == "radial":
            budget = None
        elif problem.mode == "meshed":
            budget = len(emap)
        else:
            budget = problem.budget
        subs.append(SubProblem(DesignProblem(sub_net, objective, problem.mode, budget, problem.options),
                               tuple(dense), tuple(emap)))
    return subs


def _merge(problem: DesignProblem, subs, sols) -> TopologySolution:
    net = problem.network
    z = np.zeros(net.n_edges)
    X = np.zeros((net.n_reduced, net.n_reduced))
    for sub, sol in zip(subs, sols):
        for s, k in enumerate(sub.edge_map):
            z[k] = sol.selection[s]
        r = np.asarray(sub.nodes[1:]) - 1
        X[np.ix_(r, r)] = sol.X
    objective = float(sum(s.objective for s in sols))
    status = "optimal" if all(s.optimal for s in sols) else "time_limit"
    ver = verify_solution(problem, z, X, objective=objective)
    if not ver["passed"]:
        raise VerificationError(f"merged solution failed resubstitution: {ver['failures']}")
    stats = {"mode": problem.mode, "budget": problem.budget, "components": len(subs),
             "component_budgets": [s.statistics.get("budget") for s in sols],
             "cuts_added": sum(s.statistics.get("cuts_added", 0) for s in sols),
             "node_count": sum(s.statistics.get("node_count", 0) for s in sols)}
    return TopologySolution(z, selected_pairs(net, z), objective, status, X,
                            gap=max((s.gap for s in sols), default=0.0),
                            h2_squared=_report_h2(problem, z), statistics=stats, verification=ver)


def solve_decomposed(problem: DesignProblem, backend: Optional[MilpBackend] = None) -> TopologySolution:
    """Solve per component and concatenate; budgets are split by dynamic programming."""
    subs = parallel_decomposition(problem)
    if len(subs) == 1:
        return solve(problem, backend)
    backend = backend or default_backend()
    if problem.mode == "radial":
        sols = [solve(s.problem, backend, compute_h2=False) for s in subs]
        return _merge(problem, subs, sols)

    # table[c][k] = best solution of component c using k lines (meshed: total, augment: additional)
    K = problem.budget
    tables = []
    for s in subs:
        sp = s.problem
        if problem.mode == "meshed":
            lo = sp.network.n_reduced
            hi = min(sp.network.n_edges, K - sum(o.problem.network.n_reduced for o in subs if o is not s))
        else:
            lo, hi = 0, min(int((~sp.existing).sum()), K)
        table = {}
        for k in range(lo, hi + 1):
            try:
                table[k] = solve(DesignProblem(sp.network, sp.objective, sp.mode, k, sp.options), backend,
                                 compute_h2=False)
            except InfeasibleProblem:
                continue
        if not table:
            raise InfeasibleProblem("infeasible: a component cannot be connected within the budget")
        tables.append(table)

    # knapsack over components, ties toward smaller budgets on earlier components
    best: dict[int, tuple[float, list]] = {0: (0.0, [])}
    for table in tables:
        nxt: dict[int, tuple[float, list]] = {}
        for used, (val, picks) in best.items():
            for k, sol in sorted(table.items()):
                tot = used + k
                if tot > K:
                    continue
                cand = (val + sol.objective, picks + [k])
                if tot not in nxt or cand[0] < nxt[tot][0] - 1e-12:
                    nxt[tot] = cand
        best = nxt
    if not best:
        raise InfeasibleProblem("infeasible: budget too small for all components")
    _, picks = min(best.values(), key=lambda t: (t[0], t[1]))
    return _merge(problem, subs, [t[k] for t, k in zip(tables, picks)])


def node_change(problem: DesignProblem, remove_nodes: Sequence[int] = (), add_nodes=()) -> DesignProblem:
    """Problem with nodes removed and/or added (external ids).

    ``add_nodes`` holds ``(node, lines)`` where ``node`` is a ``Node`` or mapping and
    ``lines`` a list of ``(neighbour_id, susceptance[, existing])``. Tightening then
    picks augmentation bounds when the edited existing network is still connected and
    new-design bounds otherwise.
    """
    net = problem.network
    removed = set(remove_nodes)
    if net.reference in removed:
        raise ValueError("cannot remove the reference node; choose another reference first")
    for nid in removed:
        net.index_of(nid)
    keep_nodes = [nd for nd in net.nodes if nd.id not in removed]
    edges = []
    for k, e in enumerate(net.edges):
        u, v = net.edge_ids(k)
        if u not in removed and v not in removed:
            edges.append((u, v, e.susceptance, e.existing))
    new_nodes = []
    for spec, lines in add_nodes:
        nd = spec if isinstance(spec, Node) else Node(int(spec["id"]), float(spec.get("inertia", 1.0)),
                                                      float(spec.get("damping", 1.0)),
                                                      spec.get("kind", "machine"))
        new_nodes.append(nd)
        for line in lines:
            nb, b, *rest = line
            edges.append((nd.id, nb, b, bool(rest[0]) if rest else False))
    new_net = build_network(keep_nodes + new_nodes, edges, net.reference)

    old = problem.objective
    if old.preset == "coherence":
        objective = StabilityObjective.coherence(new_net)
    else:
        pos = {nd.id: k for k, nd in enumerate(net.nodes)}
        w = []
        s = []
        ids = new_net.ids
        for a in range(len(ids)):
            if ids[a] in pos:
                s.append((ids[a], old.S[pos[ids[a]]]))
            for b in range(a + 1, len(ids)):
                if ids[a] in pos and ids[b] in pos:
                    wt = -old.W[pos[ids[a]], pos[ids[b]]]
                    if wt > 0:
                        w.append((ids[a], ids[b], wt))
        objective = StabilityObjective.from_weights(new_net, w, s)

    budget = problem.budget
    if problem.mode == "radial":
        budget = None
    elif problem.mode == "meshed":
        budget = max(new_net.n_reduced, min(budget, new_net.n_edges))
    return DesignProblem(new_net, objective, problem.mode, budget, problem.options)
