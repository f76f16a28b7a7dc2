"""Cheap feasible topologies: minimum-reactance spanning trees and rank-one greedy fill."""
from __future__ import annotations

import numpy as np

from gridtopo.network import PowerNetwork, incidence_matrix, reduced_laplacian


def spanning_completion(network: PowerNetwork, base, allowed=None):
    """Add the cheapest (lowest reactance, then lowest index) edges until the graph spans.

    Returns the completed selection, or ``None`` if ``allowed`` edges cannot connect it.
    """
    z = np.asarray(base, dtype=float).copy()
    allowed = np.ones(network.n_edges, dtype=bool) if allowed is None else np.asarray(allowed, bool)
    parent = list(range(network.n_nodes))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    comps = network.n_nodes
    for k in np.flatnonzero(z > 0.5):
        e = network.edges[k]
        ra, rb = find(e.i), find(e.j)
        if ra != rb:
            parent[ra] = rb
            comps -= 1
    order = sorted((e.reactance, k) for k, e in enumerate(network.edges) if allowed[k] and z[k] < 0.5)
    for _, k in order:
        if comps == 1:
            break
        e = network.edges[k]
        ra, rb = find(e.i), find(e.j)
        if ra != rb:
            parent[ra] = rb
            comps -= 1
            z[k] = 1.0
    return z if comps == 1 else None


def min_reactance_tree(network: PowerNetwork):
    return spanning_completion(network, np.zeros(network.n_edges))


def greedy_extend(network: PowerNetwork, Wr: np.ndarray, base, allowed, n_add: int):
    """Add up to ``n_add`` allowed edges, each time the one with the largest decrease of
    trace(W_r L^{-1}), using Sherman-Morrison updates of the inverse.

    ``base`` must be connected. Returns ``(selection, objective_trace, added_order)``.
    """
    z = np.asarray(base, dtype=float).copy()
    X = np.linalg.inv(reduced_laplacian(network, z))
    a = incidence_matrix(network)
    b = network.susceptances
    WX = Wr @ X
    value = float(np.trace(WX))
    added = []
    pool = [k for k in range(network.n_edges) if allowed[k] and z[k] < 0.5]
    for _ in range(n_add):
        if not pool:
            break
        best, best_gain, best_u = None, 0.0, None
        for k in pool:
            u = X @ a[k]
            denom = 1.0 + b[k] * (a[k] @ u)
            gain = b[k] * float(u @ Wr @ u) / denom
            if best is None or gain > best_gain + 1e-15:
                best, best_gain, best_u = k, gain, (u, denom)
        u, denom = best_u
        X = X - b[best] * np.outer(u, u) / denom
        value -= best_gain
        z[best] = 1.0
        pool.remove(best)
        added.append(best)
    return z, value, added
