"""Power network graph and Laplacian primitives.

Nodes are remapped to a dense 0-based index with the reference node in slot 0;
reduced matrices drop slot 0, so reduced index ``r`` is dense node ``r + 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from gridtopo.kernels import floyd_warshall


class NetworkError(ValueError):
    """Invalid network description."""


@dataclass(frozen=True)
class Node:
    id: int
    inertia: float = 1.0
    damping: float = 1.0
    kind: str = "machine"

    @property
    def is_machine(self) -> bool:
        return self.kind == "machine"


@dataclass(frozen=True)
class Edge:
    i: int  # dense index, i < j
    j: int
    susceptance: float
    existing: bool = False

    @property
    def reactance(self) -> float:
        return 1.0 / self.susceptance


@dataclass(frozen=True)
class PowerNetwork:
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]
    reference: int = field(default=0)  # external id of the reference node

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_reduced(self) -> int:
        return len(self.nodes) - 1

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def ids(self) -> list[int]:
        return [nd.id for nd in self.nodes]

    def index_of(self, node_id: int) -> int:
        for k, nd in enumerate(self.nodes):
            if nd.id == node_id:
                return k
        raise NetworkError(f"unknown node id {node_id}")

    def edge_index(self, u: int, v: int, *, dense: bool = False) -> int:
        """Index of the candidate edge joining two nodes (external ids unless ``dense``)."""
        if not dense:
            u, v = self.index_of(u), self.index_of(v)
        a, b = min(u, v), max(u, v)
        for k, e in enumerate(self.edges):
            if e.i == a and e.j == b:
                return k
        raise NetworkError(f"unknown edge ({self.nodes[a].id}, {self.nodes[b].id})")

    def edge_ids(self, k: int) -> tuple[int, int]:
        e = self.edges[k]
        return self.nodes[e.i].id, self.nodes[e.j].id

    @property
    def susceptances(self) -> np.ndarray:
        return np.array([e.susceptance for e in self.edges], dtype=float)

    @property
    def existing_mask(self) -> np.ndarray:
        return np.array([e.existing for e in self.edges], dtype=bool)

    @property
    def inertia(self) -> np.ndarray:
        return np.array([nd.inertia for nd in self.nodes], dtype=float)

    @property
    def damping(self) -> np.ndarray:
        return np.array([nd.damping for nd in self.nodes], dtype=float)

    @property
    def machine_mask(self) -> np.ndarray:
        return np.array([nd.is_machine for nd in self.nodes], dtype=bool)

    def endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        eu = np.array([e.i for e in self.edges], dtype=np.int64)
        ev = np.array([e.j for e in self.edges], dtype=np.int64)
        return eu, ev

    def with_existing(self, existing: Iterable[int]) -> "PowerNetwork":
        keep = set(existing)
        edges = tuple(Edge(e.i, e.j, e.susceptance, k in keep) for k, e in enumerate(self.edges))
        return PowerNetwork(self.nodes, edges, self.reference)


def build_network(nodes, edges, reference=None, *, require_connected=True) -> PowerNetwork:
    """Validate and canonicalize a network.

    ``nodes`` is a sequence of ``Node`` or mappings with ``id``, ``inertia``,
    ``damping`` and optional ``kind``; ``edges`` holds ``(from, to, susceptance[, existing])``
    tuples or mappings with the same keys as the JSON document.
    """
    parsed = []
    for nd in nodes:
        if not isinstance(nd, Node):
            nd = Node(int(nd["id"]), float(nd.get("inertia", 1.0)), float(nd.get("damping", 1.0)),
                      nd.get("kind", "machine"))
        if nd.kind not in ("machine", "zero_injection"):
            raise NetworkError(f"node {nd.id}: unknown kind {nd.kind!r}")
        if nd.is_machine and nd.inertia <= 0:
            raise NetworkError(f"node {nd.id}: nonpositive inertia")
        if nd.is_machine and nd.damping <= 0:
            raise NetworkError(f"node {nd.id}: nonpositive damping")
        parsed.append(nd)
    ids = [nd.id for nd in parsed]
    if len(set(ids)) != len(ids):
        raise NetworkError("duplicate node id")
    if len(parsed) < 2:
        raise NetworkError("a network needs at least two nodes")
    if reference is None:
        reference = ids[0]
    if reference not in ids:
        raise NetworkError(f"reference node {reference} missing")

    # reference first, then remaining nodes in the given order
    ordered = [nd for nd in parsed if nd.id == reference] + [nd for nd in parsed if nd.id != reference]
    pos = {nd.id: k for k, nd in enumerate(ordered)}

    canon = {}
    for e in edges:
        if isinstance(e, dict):
            u, v, b, ex = e["from"], e["to"], e["susceptance"], e.get("existing", False)
        else:
            u, v, b, *rest = e
            ex = rest[0] if rest else False
        if u not in pos or v not in pos:
            raise NetworkError(f"edge ({u}, {v}): unknown node")
        if u == v:
            raise NetworkError(f"edge ({u}, {v}): self-loop")
        if not b > 0:
            raise NetworkError(f"edge ({u}, {v}): nonpositive susceptance")
        a, c = sorted((pos[u], pos[v]))
        if (a, c) in canon:
            raise NetworkError(f"edge ({u}, {v}): duplicate edge")
        canon[(a, c)] = Edge(a, c, float(b), bool(ex))
    net = PowerNetwork(tuple(ordered), tuple(canon[k] for k in sorted(canon)), reference)
    if require_connected and not _spanning(net.n_nodes, list(canon)):
        raise NetworkError("candidate graph is disconnected")
    return net


def _spanning(n: int, pairs: Sequence[tuple[int, int]]) -> bool:
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    comps = n
    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            comps -= 1
    return comps == 1


def incidence_row(network: PowerNetwork, edge: int) -> np.ndarray:
    """Row of the reduced branch-bus incidence matrix: +1 at i, -1 at j, reference dropped.

    Lines touching the reference keep a single +1 at their other endpoint.
    """
    if not 0 <= edge < network.n_edges:
        raise NetworkError(f"unknown edge {edge}")
    e = network.edges[edge]
    a = np.zeros(network.n_reduced)
    if e.i > 0:
        a[e.i - 1] = 1.0
    if e.j > 0:
        a[e.j - 1] = -1.0 if e.i > 0 else 1.0
    return a


def incidence_matrix(network: PowerNetwork) -> np.ndarray:
    """|E| x N reduced incidence matrix."""
    return np.array([incidence_row(network, k) for k in range(network.n_edges)]).reshape(
        network.n_edges, network.n_reduced)


def reduced_laplacian(network: PowerNetwork, selection) -> np.ndarray:
    """Sum of z_l b_l a_l a_l^T over candidate edges; linear in the selection."""
    z = np.asarray(selection, dtype=float)
    if z.shape != (network.n_edges,):
        raise NetworkError(f"selection must have length {network.n_edges}")
    a = incidence_matrix(network)
    return (a.T * (z * network.susceptances)) @ a


def full_laplacian(network: PowerNetwork, selection) -> np.ndarray:
    z = np.asarray(selection, dtype=float)
    n = network.n_nodes
    L = np.zeros((n, n))
    for zl, e in zip(z, network.edges):
        w = zl * e.susceptance
        L[e.i, e.i] += w
        L[e.j, e.j] += w
        L[e.i, e.j] -= w
        L[e.j, e.i] -= w
    return L


def is_connected(network: PowerNetwork, selection) -> bool:
    """True iff the selected edges span every node (rank of the reduced Laplacian is N)."""
    z = np.asarray(selection)
    pairs = [(e.i, e.j) for zl, e in zip(z, network.edges) if zl > 0.5]
    if len(pairs) < network.n_reduced:
        return False
    return _spanning(network.n_nodes, pairs)


def find_critical_edges(network: PowerNetwork, edges: Iterable[int] | None = None):
    """Bridges of the candidate graph.

    Returns a list of ``(edge_index, near, far)`` where ``near`` is the dense
    endpoint on the reference side and ``far`` the other endpoint, together with
    the dense node sets of both sides as ``components[edge_index] = (V_l, V_bar_l)``.
    """
    active = list(range(network.n_edges)) if edges is None else list(edges)
    n = network.n_nodes
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for k in active:
        e = network.edges[k]
        adj[e.i].append((e.j, k))
        adj[e.j].append((e.i, k))

    disc = [-1] * n
    low = [0] * n
    parent_edge = [-1] * n
    order = []
    bridges = []
    timer = 0
    # iterative DFS from the reference node
    for root in range(n):
        if disc[root] >= 0:
            continue
        disc[root] = low[root] = timer
        timer += 1
        stack = [(root, iter(adj[root]))]
        order.append(root)
        while stack:
            u, it = stack[-1]
            advanced = False
            for v, k in it:
                if k == parent_edge[u]:
                    continue
                if disc[v] < 0:
                    parent_edge[v] = k
                    disc[v] = low[v] = timer
                    timer += 1
                    order.append(v)
                    stack.append((v, iter(adj[v])))
                    advanced = True
                    break
                low[u] = min(low[u], disc[v])
            if not advanced:
                stack.pop()
                if stack:
                    p = stack[-1][0]
                    low[p] = min(low[p], low[u])
                    if low[u] > disc[p]:
                        bridges.append((parent_edge[u], p, u))

    out = []
    components = {}
    for k, near, far in sorted(bridges):
        far_side = _reachable(n, adj, far, banned=k)
        near_side = frozenset(range(n)) - far_side
        if 0 in far_side:
            near, far = far, near
            near_side, far_side = far_side, near_side
        out.append((k, near, far))
        components[k] = (near_side, far_side)
    return out, components


def _reachable(n, adj, start, banned):
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v, k in adj[u]:
            if k != banned and v not in seen:
                seen.add(v)
                stack.append(v)
    return frozenset(seen)


def shortest_path_reactances(network: PowerNetwork, edges: Iterable[int] | None = None) -> np.ndarray:
    """All-pairs minimum total reactance over the given edges (dense node order).

    Unreachable pairs are ``inf``.
    """
    active = range(network.n_edges) if edges is None else edges
    n = network.n_nodes
    w = np.full((n, n), np.inf)
    for k in active:
        e = network.edges[k]
        x = e.reactance
        if x < w[e.i, e.j]:
            w[e.i, e.j] = w[e.j, e.i] = x
    return floyd_warshall(w)


def selection_from_edges(network: PowerNetwork, pairs: Iterable[tuple[int, int]]) -> np.ndarray:
    z = np.zeros(network.n_edges)
    for u, v in pairs:
        z[network.edge_index(u, v)] = 1.0
    return z


def selected_pairs(network: PowerNetwork, selection) -> list[tuple[int, int]]:
    return [network.edge_ids(k) for k, zl in enumerate(np.asarray(selection)) if zl > 0.5]
