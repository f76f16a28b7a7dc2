"""Pure-Python/numpy fallbacks for the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def floyd_warshall(weights):
    d = np.array(weights, dtype=np.float64, copy=True)
    np.fill_diagonal(d, 0.0)
    for k in range(d.shape[0]):
        np.minimum(d, d[:, k, None] + d[None, k, :], out=d)
    return d


def _spans(n_nodes, eu, ev, mask):
    parent = list(range(n_nodes))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    comps = n_nodes
    e = 0
    while mask:
        if mask & 1:
            ra, rb = find(eu[e]), find(ev[e])
            if ra != rb:
                parent[ra] = rb
                comps -= 1
                if comps == 1:
                    return True
        mask >>= 1
        e += 1
    return comps == 1


def connected_masks(n_nodes, eu, ev, fixed_mask, free_mask, min_edges, max_edges):
    if n_nodes > 64 or len(eu) > 64:
        raise ValueError("connected_masks handles at most 64 nodes and 64 lines")
    eu = [int(u) for u in eu]
    ev = [int(v) for v in ev]
    fixed_mask, free_mask = int(fixed_mask), int(free_mask)
    nfixed = bin(fixed_mask).count("1")
    found = []
    sub = free_mask
    while True:
        cnt = nfixed + bin(sub).count("1")
        if max(min_edges, n_nodes - 1) <= cnt <= max_edges:
            mask = fixed_mask | sub
            if _spans(n_nodes, eu, ev, mask):
                found.append(mask)
        if sub == 0:
            break
        sub = (sub - 1) & free_mask
    arr = np.array(found, dtype=np.uint64)
    arr.sort()
    return arr


def _rk4_maps(A, CtC, h):
    d = A.shape[0]
    eye = np.eye(d)
    K2 = eye + 0.5 * h * A
    K3 = eye + 0.5 * h * A @ K2
    K4 = eye + h * A @ K3
    step = eye + h / 6.0 * (A + 2.0 * A @ K2 + 2.0 * A @ K3 + A @ K4)
    gain = h / 6.0 * (CtC + 2.0 * K2.T @ CtC @ K2 + 2.0 * K3.T @ CtC @ K3 + K4.T @ CtC @ K4)
    return step, gain


def rk4_energy(A, X0, CtC, h, n_steps, block=512):
    """Same stage arithmetic as the compiled loop, applied as precomputed linear maps.

    RK4 on a linear system is x <- Phi x with a quadratic energy increment x' G x, so
    blocks of steps are evaluated with a stack of matrix powers.
    """
    A = np.asarray(A, dtype=np.float64)
    CtC = np.asarray(CtC, dtype=np.float64)
    X = np.array(X0, dtype=np.float64, copy=True)
    step, gain = _rk4_maps(A, CtC, h)
    block = max(1, min(block, int(n_steps)))
    powers = np.empty((block,) + A.shape)
    powers[0] = np.eye(A.shape[0])
    for b in range(1, block):
        powers[b] = step @ powers[b - 1]
    jump = step @ powers[-1]
    energy, gmax = 0.0, 0.0
    done = 0
    while done < n_steps:
        nb = min(block, n_steps - done)
        states = powers[:nb] @ X
        energy += float(np.einsum("bic,ij,bjc->", states, gain, states))
        g = np.einsum("bic,ij,bjc->b", states, CtC, states)
        gmax = max(gmax, float(g.max()))
        X = jump @ X if nb == block else step @ states[-1]
        done += nb
    return energy, X, gmax
