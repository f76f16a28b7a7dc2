"""Linearized swing dynamics and the H2 stability metric.

The squared H2 norm is computed two ways: from the observability Gramian and
by time-domain integration of impulse responses. Under identical damping the
Gramian value is proportional to ``trace(W_r L_r^{-1})`` on the reduced
matrices, which is the cost the MILP optimizes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from gridtopo.kernels import rk4_energy
from gridtopo.network import PowerNetwork, full_laplacian

logger = logging.getLogger(__name__)


class DisconnectedTopology(ValueError):
    pass


class GramianError(RuntimeError):
    pass


@dataclass(frozen=True)
class StabilityObjective:
    """Angle-difference weights ``W`` (full, (N+1)x(N+1)) and frequency weights ``S``."""

    W: np.ndarray
    S: np.ndarray
    preset: str = "custom"

    @property
    def reduced_weights(self) -> np.ndarray:
        return self.W[1:, 1:]

    @property
    def has_frequency_weights(self) -> bool:
        return bool(np.any(self.S > 0))

    @classmethod
    def coherence(cls, network: PowerNetwork) -> "StabilityObjective":
        """W = I - 11^T / n over the machine nodes, S = 0."""
        mask = network.machine_mask
        n_s = int(mask.sum())
        W = np.zeros((network.n_nodes, network.n_nodes))
        idx = np.flatnonzero(mask)
        W[np.ix_(idx, idx)] = np.eye(n_s) - np.ones((n_s, n_s)) / n_s
        return cls(W, np.zeros(network.n_nodes), "coherence")

    @classmethod
    def from_weights(cls, network: PowerNetwork, w, s=()) -> "StabilityObjective":
        """Build from ``(i, j, weight)`` and ``(i, weight)`` triples keyed by external node id."""
        n = network.n_nodes
        W = np.zeros((n, n))
        for i, j, wt in w:
            if wt < 0:
                raise ValueError(f"negative angle weight on ({i}, {j})")
            a, b = network.index_of(i), network.index_of(j)
            if a == b:
                raise ValueError(f"angle weight ({i}, {j}) must join distinct nodes")
            W[a, a] += wt
            W[b, b] += wt
            W[a, b] -= wt
            W[b, a] -= wt
        S = np.zeros(n)
        for i, wt in s:
            if wt < 0:
                raise ValueError(f"negative frequency weight at node {i}")
            S[network.index_of(i)] = wt
        return cls(W, S, "custom")

    def restrict(self, dense_nodes) -> "StabilityObjective":
        idx = np.asarray(dense_nodes)
        return StabilityObjective(self.W[np.ix_(idx, idx)], self.S[idx], self.preset)


@dataclass(frozen=True)
class StateSpace:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    @property
    def n_machines(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class GramianResult:
    Q: np.ndarray
    h2_squared: float
    residual: float


def psd_sqrt(M: np.ndarray, clamp: float = 1e-12) -> np.ndarray:
    w, V = np.linalg.eigh((M + M.T) / 2)
    w = np.where(w < clamp, 0.0, w)
    return (V * np.sqrt(w)) @ V.T


def kron_reduce(L: np.ndarray, keep) -> np.ndarray:
    """Schur complement of ``L`` onto the index set ``keep``.

    Its inverse equals the ``keep`` block of ``L^{-1}`` when ``L`` is invertible.
    """
    L = np.asarray(L, dtype=float)
    keep = np.asarray(sorted(keep), dtype=int)
    drop = np.setdiff1d(np.arange(L.shape[0]), keep)
    if drop.size == 0:
        return L[np.ix_(keep, keep)].copy()
    inner = L[np.ix_(drop, drop)]
    if np.linalg.cond(inner) > 1e12:
        raise np.linalg.LinAlgError("singular interior block in Kron reduction")
    cross = L[np.ix_(keep, drop)]
    return L[np.ix_(keep, keep)] - cross @ np.linalg.solve(inner, cross.T)


def state_matrices(network: PowerNetwork, selection, objective: StabilityObjective) -> StateSpace:
    """Swing dynamics (A, B) and output matrix C = blkdiag(W^1/2, S^1/2).

    Zero-injection nodes are Kron-reduced away first, so the state covers machine nodes only.
    """
    L = full_laplacian(network, selection)
    mask = network.machine_mask
    if not mask.all():
        keep = np.flatnonzero(mask)
        L = kron_reduce(L, keep)
        W = objective.W[np.ix_(keep, keep)]
        S = objective.S[keep]
    else:
        W, S = objective.W, objective.S
    M = network.inertia[mask]
    D = network.damping[mask]
    if np.any(M <= 0) or np.any(D <= 0):
        raise ValueError("machine inertia and damping must be positive")
    n = len(M)
    Z, I = np.zeros((n, n)), np.eye(n)
    A = np.block([[Z, I], [-L / M[:, None], -np.diag(D / M)]])
    B = np.vstack([Z, np.diag(1.0 / M)])
    C = np.block([[psd_sqrt(W), Z], [Z, np.diag(np.sqrt(S))]])
    return StateSpace(A, B, C)


def _rigid_mode_basis(n: int) -> np.ndarray:
    e = np.zeros(2 * n)
    e[:n] = 1.0 / np.sqrt(n)
    return sla.null_space(e[None, :])


def observability_gramian(ss: StateSpace, rtol: float = 1e-8) -> GramianResult:
    """Solve A^T Q + Q A = -C^T C after deflating the uniform angle-shift mode."""
    A, B, C = ss.A, ss.B, ss.C
    CtC = C.T @ C
    if not np.any(CtC):
        return GramianResult(np.zeros_like(A), 0.0, 0.0)
    n = ss.n_machines
    rigid = np.zeros(2 * n)
    rigid[:n] = 1.0
    if np.linalg.norm(C @ rigid) > 1e-9 * max(1.0, np.linalg.norm(C)):
        raise GramianError("uniform angle shift is observable; W must annihilate the ones vector")
    P = _rigid_mode_basis(n)
    Aq = P.T @ A @ P
    eig = np.linalg.eigvals(Aq)
    if eig.real.max() >= -1e-10:
        raise GramianError(
            f"state matrix is not Hurwitz beyond the rigid-body mode (max Re = {eig.real.max():.3e});"
            " the topology is probably disconnected")
    Cq = C @ P
    CqtCq = Cq.T @ Cq
    Qq = sla.solve_continuous_lyapunov(Aq.T, -CqtCq)
    Qq = (Qq + Qq.T) / 2
    # iterative refinement: stiff inertia ratios leave Bartels-Stewart a few ulps short
    best = np.linalg.norm(Aq.T @ Qq + Qq @ Aq + CqtCq)
    for _ in range(3):
        if best <= 1e-3 * rtol * np.linalg.norm(CtC):
            break
        R = Aq.T @ Qq + Qq @ Aq + CqtCq
        dQ = sla.solve_continuous_lyapunov(Aq.T, -R)
        trial = Qq + (dQ + dQ.T) / 2
        r = np.linalg.norm(Aq.T @ trial + trial @ Aq + CqtCq)
        if r >= best:
            break
        Qq, best = trial, r
    Q = P @ Qq @ P.T
    resid = np.linalg.norm(A.T @ Q + Q @ A + CtC) / np.linalg.norm(CtC)
    if resid > rtol:
        raise GramianError(f"Lyapunov residual {resid:.2e} exceeds {rtol:.0e}")
    h2 = float(np.trace(B.T @ Q @ B))
    return GramianResult(Q, h2, float(resid))


def closed_form_objective(Wr: np.ndarray, Lr: np.ndarray) -> float:
    """trace(W_r L_r^{-1})."""
    Wr = np.asarray(Wr, dtype=float)
    Lr = np.asarray(Lr, dtype=float)
    if Lr.size == 0:
        return 0.0
    try:
        cho = sla.cho_factor(Lr)
    except np.linalg.LinAlgError:
        raise DisconnectedTopology("disconnected topology") from None
    if np.min(np.abs(np.diag(cho[0]))) < 1e-10 * max(1.0, np.abs(Lr).max()) ** 0.5:
        raise DisconnectedTopology("disconnected topology")
    return float(np.trace(sla.cho_solve(cho, Wr)))


def h2_squared(network: PowerNetwork, selection, objective: StabilityObjective) -> float:
    return observability_gramian(state_matrices(network, selection, objective)).h2_squared


def impulse_energy_estimate(ss: StateSpace, horizon: float = 10.0, step: float = 1e-3,
                            decay: float = 1e-6, max_horizon: float = 1e5) -> float:
    """Sum over input channels of the output energy of a unit impulse, by fixed-step RK4.

    The horizon is doubled until the output amplitude over the final stretch has
    fallen below ``decay`` times its peak.
    """
    CtC = ss.C.T @ ss.C
    if not np.any(CtC):
        return 0.0
    X = ss.B.copy()
    energy, peak, t = 0.0, 0.0, 0.0
    target = horizon
    while True:
        seg_steps = max(1, int(round((target - t) / step / 8)))
        tail = 0.0
        while t < target - step / 2:
            n = min(seg_steps, int(round((target - t) / step)))
            e, X, gmax = rk4_energy(ss.A, X, CtC, step, n)
            energy += e
            peak = max(peak, gmax)
            tail = gmax
            t += n * step
        if tail <= decay**2 * peak:
            return float(energy)
        if 2 * target > max_horizon:
            raise RuntimeError(
                f"impulse response has not decayed within {target:g} s; pass a longer max_horizon")
        logger.debug("extending horizon to %g s", 2 * target)
        target *= 2
