"""Eigenvector cuts from the certificate Y = [[X, I], [I, L(z)]] >= 0.

For any vector v = (v1, v2) the inequality

    v1' X v1 + v2' L(z) v2 + 2 v1' v2 >= 0

is linear in (X, z) and holds at every binary point with X = L(z)^{-1}. Vectors
come from negative eigenpairs of Y at a relaxation point, optionally truncated to
the k coordinates with the most negative products v1_n * v2_n.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from gridtopo.formulation import GE, LinearConstraint, VariableLayout
from gridtopo.network import PowerNetwork, incidence_matrix, reduced_laplacian

logger = logging.getLogger(__name__)

VIOLATION_TOL = 1e-8


@dataclass
class CutCandidate:
    v1: np.ndarray
    v2: np.ndarray
    eigenvalue: float
    kind: str  # sparse | dense | random
    support: int
    violation: float = 0.0

    def value(self, X: np.ndarray, z, network: PowerNetwork) -> float:
        """v' Y v at (X, z)."""
        L = reduced_laplacian(network, z)
        return float(self.v1 @ X @ self.v1 + self.v2 @ L @ self.v2 + 2 * self.v1 @ self.v2)


@dataclass
class CutPool:
    """Deduplicated record of cuts added across rounds, with a total budget."""

    budget: int = 200
    seen: set = field(default_factory=set)
    log: list = field(default_factory=list)
    accepted: list = field(default_factory=list)

    @property
    def remaining(self) -> int:
        return self.budget - len(self.accepted)

    def offer(self, cand: CutCandidate, con: LinearConstraint, round_no: int) -> bool:
        key = _fingerprint(con)
        entry = {"round": round_no, "eigenvalue": cand.eigenvalue, "violation": cand.violation,
                 "kind": cand.kind, "support": cand.support}
        if key in self.seen:
            entry["status"] = "duplicate"
        elif self.remaining <= 0:
            entry["status"] = "budget"
        else:
            entry["status"] = "accepted"
            self.seen.add(key)
            self.accepted.append((cand, con))
        self.log.append(entry)
        return entry["status"] == "accepted"


def _fingerprint(con: LinearConstraint):
    vals = list(con.coeffs.values()) + [con.rhs]
    scale = max(abs(v) for v in vals) or 1.0
    return tuple(sorted((k, round(v / scale, 10)) for k, v in con.coeffs.items())) + (round(con.rhs / scale, 10),)


def assemble_Y(X: np.ndarray, z, network: PowerNetwork) -> np.ndarray:
    n = X.shape[0]
    I = np.eye(n)
    return np.block([[X, I], [I, reduced_laplacian(network, z)]])


def sparsify(v1: np.ndarray, v2: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Keep the k coordinates with the most negative products v1_n * v2_n in both halves."""
    prod = v1 * v2
    keep = np.argsort(prod, kind="stable")[:k]
    s1, s2 = np.zeros_like(v1), np.zeros_like(v2)
    s1[keep], s2[keep] = v1[keep], v2[keep]
    return s1, s2


def cut_to_inequality(cand: CutCandidate, network: PowerNetwork,
                      layout: Optional[VariableLayout] = None) -> LinearConstraint:
    """Linear form of v' Y v >= 0 over the model variables.

    X_ii gets v1_i^2, X_ij (i < j) gets 2 v1_i v1_j, z_l gets b_l (a_l' v2)^2, and the
    constant 2 v1' v2 moves to the right-hand side.
    """
    layout = layout or VariableLayout(network)
    coeffs: dict[int, float] = {}
    nz = np.flatnonzero(cand.v1)
    for a_ in nz:
        for b_ in nz:
            if a_ <= b_:
                c = cand.v1[a_] * cand.v1[b_] * (1.0 if a_ == b_ else 2.0)
                if c != 0.0:
                    coeffs[layout.x(a_, b_)] = c
    proj = incidence_matrix(network) @ cand.v2
    zc = network.susceptances * proj**2
    for ell in np.flatnonzero(zc):
        coeffs[layout.z(ell)] = float(zc[ell])
    return LinearConstraint(coeffs, GE, -2.0 * float(cand.v1 @ cand.v2), f"eig_{cand.kind}")


def _candidate(v1, v2, lam, kind, X, z, network):
    support = int(np.count_nonzero((v1 != 0) | (v2 != 0)))
    c = CutCandidate(v1, v2, float(lam), kind, support)
    c.violation = -c.value(X, z, network)
    return c


def separate(X: np.ndarray, z, network: PowerNetwork, gamma: float = -0.95, k: int = 1,
             max_cuts: int = 10, dense: bool = False, random_cuts: int = 0,
             rng: Optional[np.random.Generator] = None) -> list[CutCandidate]:
    """Cuts violated at the relaxation point (X, z), most negative eigenvalue first.

    For each eigenpair with eigenvalue below ``gamma`` the k-sparse truncation is
    emitted when it is still violated; otherwise the dense vector is used. With
    ``dense`` both variants are emitted.
    """
    n = X.shape[0]
    Y = assemble_Y((X + X.T) / 2, z, network)
    w, V = np.linalg.eigh(Y)
    out = []
    for lam, v in zip(w, V.T):
        if lam >= gamma or len(out) >= max_cuts:
            break
        v1, v2 = v[:n].copy(), v[n:].copy()
        emitted = False
        if k < n:
            s1, s2 = sparsify(v1, v2, k)
            cand = _candidate(s1, s2, lam, "sparse", X, z, network)
            if cand.violation > VIOLATION_TOL and np.any(s1):
                out.append(cand)
                emitted = True
        if (dense or not emitted) and len(out) < max_cuts:
            cand = _candidate(v1, v2, lam, "dense", X, z, network)
            if cand.violation > VIOLATION_TOL and np.any(v1):
                out.append(cand)
    if random_cuts:
        rng = rng or np.random.default_rng(0)
        for _ in range(random_cuts):
            v = rng.standard_normal(2 * n)
            cand = _candidate(v[:n], v[n:], float("nan"), "random", X, z, network)
            if cand.violation > VIOLATION_TOL:
                out.append(cand)
    return out
