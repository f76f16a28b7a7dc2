# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Signatures mirror gridtopo._kernels_py exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def floyd_warshall(double[:, :] weights):
    cdef Py_ssize_t n = weights.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double dik, cand
    out = np.array(weights, dtype=np.float64, copy=True)
    cdef double[:, :] d = out
    for i in range(n):
        d[i, i] = 0.0
    for k in range(n):
        for i in range(n):
            dik = d[i, k]
            if dik == INFINITY:
                continue
            for j in range(n):
                cand = dik + d[k, j]
                if cand < d[i, j]:
                    d[i, j] = cand
    return out


cdef inline int _find(int* parent, int x) noexcept nogil:
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


cdef inline int _popcount(unsigned long long x) noexcept nogil:
    cdef int c = 0
    while x:
        x &= x - 1
        c += 1
    return c


def connected_masks(int n_nodes, long[:] eu, long[:] ev,
                    unsigned long long fixed_mask, unsigned long long free_mask,
                    int min_edges, int max_edges):
    """All masks ``fixed | s`` (s a submask of free) whose edges span every node."""
    cdef Py_ssize_t m = eu.shape[0]
    cdef int parent[64]
    if n_nodes > 64 or m > 64:
        raise ValueError("connected_masks handles at most 64 nodes and 64 lines")
    cdef unsigned long long sub = free_mask
    cdef unsigned long long mask
    cdef int cnt, comps, e, a, ra, rb, nfixed
    found = []
    nfixed = _popcount(fixed_mask)
    while True:
        mask = fixed_mask | sub
        cnt = nfixed + _popcount(sub)
        if cnt >= min_edges and cnt <= max_edges and cnt >= n_nodes - 1:
            for a in range(n_nodes):
                parent[a] = a
            comps = n_nodes
            for e in range(m):
                if (mask >> e) & 1ULL:
                    ra = _find(parent, <int>eu[e])
                    rb = _find(parent, <int>ev[e])
                    if ra != rb:
                        parent[ra] = rb
                        comps -= 1
                        if comps == 1:
                            break
            if comps == 1:
                found.append(mask)
        if sub == 0:
            break
        sub = (sub - 1) & free_mask
    arr = np.array(found, dtype=np.uint64)
    arr.sort()
    return arr


def rk4_energy(double[:, :] A, double[:, :] X0, double[:, :] CtC, double h, long n_steps):
    """Classical RK4 on x' = Ax for every column of X0, integrating sum_k x_k' CtC x_k.

    Returns (energy, final states, max instantaneous output power).
    """
    cdef Py_ssize_t d = A.shape[0]
    cdef Py_ssize_t nc = X0.shape[1]
    cdef Py_ssize_t i, c
    cdef long step
    cdef double energy = 0.0, gmax = 0.0, g1, g2, g3, g4
    X = np.array(X0, dtype=np.float64, copy=True)
    cdef double[:, :] x = X
    cdef double[:, :] k1 = np.zeros((d, nc))
    cdef double[:, :] k2 = np.zeros((d, nc))
    cdef double[:, :] k3 = np.zeros((d, nc))
    cdef double[:, :] k4 = np.zeros((d, nc))
    cdef double[:, :] tmp = np.zeros((d, nc))

    with nogil:
        for step in range(n_steps):
            _matmul(A, x, k1, d, nc)
            g1 = _quad(CtC, x, d, nc)
            if g1 > gmax:
                gmax = g1
            for i in range(d):
                for c in range(nc):
                    tmp[i, c] = x[i, c] + 0.5 * h * k1[i, c]
            g2 = _quad(CtC, tmp, d, nc)
            _matmul(A, tmp, k2, d, nc)
            for i in range(d):
                for c in range(nc):
                    tmp[i, c] = x[i, c] + 0.5 * h * k2[i, c]
            g3 = _quad(CtC, tmp, d, nc)
            _matmul(A, tmp, k3, d, nc)
            for i in range(d):
                for c in range(nc):
                    tmp[i, c] = x[i, c] + h * k3[i, c]
            g4 = _quad(CtC, tmp, d, nc)
            _matmul(A, tmp, k4, d, nc)
            energy += h / 6.0 * (g1 + 2.0 * g2 + 2.0 * g3 + g4)
            for i in range(d):
                for c in range(nc):
                    x[i, c] += h / 6.0 * (k1[i, c] + 2.0 * k2[i, c] + 2.0 * k3[i, c] + k4[i, c])
    return energy, X, gmax


cdef inline void _matmul(double[:, :] A, double[:, :] x, double[:, :] out,
                         Py_ssize_t d, Py_ssize_t nc) noexcept nogil:
    cdef Py_ssize_t i, j, c
    cdef double a
    for i in range(d):
        for c in range(nc):
            out[i, c] = 0.0
        for j in range(d):
            a = A[i, j]
            if a != 0.0:
                for c in range(nc):
                    out[i, c] += a * x[j, c]


cdef inline double _quad(double[:, :] Q, double[:, :] x, Py_ssize_t d, Py_ssize_t nc) noexcept nogil:
    cdef Py_ssize_t i, j, c
    cdef double total = 0.0, q
    for i in range(d):
        for j in range(d):
            q = Q[i, j]
            if q != 0.0:
                for c in range(nc):
                    total += q * x[i, c] * x[j, c]
    return total
