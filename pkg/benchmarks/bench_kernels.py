"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from gridtopo import _kernels_py

try:
    from gridtopo import _kernels as compiled
except ImportError:
    compiled = None


def _cases(rng):
    n = 60
    W = np.full((n, n), np.inf)
    for _ in range(4 * n):
        a, b = rng.integers(n, size=2)
        if a != b:
            W[a, b] = W[b, a] = rng.uniform(0.1, 5)

    nodes, lines = 9, 20
    eu = rng.integers(0, nodes, size=lines).astype(np.int64)
    ev = ((eu + 1 + rng.integers(0, nodes - 1, size=lines)) % nodes).astype(np.int64)
    masks = (nodes, eu, ev, 0, (1 << lines) - 1, nodes - 1, nodes + 2)

    m = 8
    L = np.diag(np.full(m, 2.0)) - np.eye(m, k=1) - np.eye(m, k=-1)
    A = np.block([[np.zeros((m, m)), np.eye(m)], [-L, -np.eye(m)]])
    X0 = np.vstack([np.zeros((m, m)), np.eye(m)])
    rk4 = (A, X0, np.eye(2 * m), 1e-3, 5000)
    return {"floyd_warshall": (W,), "connected_masks": masks, "rk4_energy": rk4}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    cases = _cases(np.random.default_rng(0))
    print(f"{'kernel':<16} {'python [ms]':>12} {'cython [ms]':>12} {'speedup':>8}")
    for name, call_args in cases.items():
        slow = min(timeit.repeat(lambda: getattr(_kernels_py, name)(*call_args), number=1, repeat=args.repeat))
        if compiled is None:
            print(f"{name:<16} {1e3 * slow:>12.2f} {'n/a':>12} {'':>8}")
            continue
        fast = min(timeit.repeat(lambda: getattr(compiled, name)(*call_args), number=1, repeat=args.repeat))
        print(f"{name:<16} {1e3 * slow:>12.2f} {1e3 * fast:>12.2f} {slow / fast:>7.1f}x")


if __name__ == "__main__":
    main()
