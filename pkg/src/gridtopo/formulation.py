"""Exact MILP for topology design.

Variables are ``z`` (one binary per candidate line), the upper triangle of the
symmetric matrix ``X`` (inverse reduced Laplacian) and McCormick auxiliaries
``y[l, m, q] = z_l * X_mq`` created only where row ``m`` is an endpoint of line
``l``; every other bilinear term has a zero coefficient in ``L(z) X = I``.
"""
from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field

import numpy as np

from gridtopo.network import PowerNetwork, incidence_matrix
from gridtopo.problem import DesignProblem, InfeasibleProblem

LE, GE, EQ = "<=", ">=", "=="


@dataclass
class LinearConstraint:
    coeffs: dict[int, float]
    sense: str
    rhs: float
    name: str = ""

    def activity(self, x) -> float:
        return sum(c * x[k] for k, c in self.coeffs.items())

    def violation(self, x) -> float:
        """Positive amount by which ``x`` violates the constraint (0 if satisfied)."""
        a = self.activity(x)
        if self.sense == LE:
            return max(0.0, a - self.rhs)
        if self.sense == GE:
            return max(0.0, self.rhs - a)
        return abs(a - self.rhs)


@dataclass
class BoundBox:
    """Entrywise bounds on the symmetric matrix X with the source of each side."""

    lower: np.ndarray
    upper: np.ndarray
    lower_src: np.ndarray
    upper_src: np.ndarray

    @classmethod
    def empty(cls, n: int) -> "BoundBox":
        return cls(np.full((n, n), -np.inf), np.full((n, n), np.inf),
                   np.full((n, n), "", dtype=object), np.full((n, n), "", dtype=object))

    @property
    def n(self) -> int:
        return self.lower.shape[0]

    def copy(self) -> "BoundBox":
        return BoundBox(self.lower.copy(), self.upper.copy(), self.lower_src.copy(), self.upper_src.copy())

    def raise_lower(self, values, source: str, mask=None) -> int:
        """Entrywise max with ``values``; returns how many entries moved."""
        values = np.asarray(values, dtype=float)
        v = np.maximum(values, values.T)
        better = v > self.lower
        if mask is not None:
            better &= np.asarray(mask) | np.asarray(mask).T
        self.lower = np.where(better, v, self.lower)
        self.lower_src = np.where(better, source, self.lower_src)
        return int(np.triu(better).sum())

    def cap_upper(self, values, source: str, mask=None) -> int:
        """Entrywise min with ``values``; returns how many entries moved."""
        values = np.asarray(values, dtype=float)
        v = np.minimum(values, values.T)
        better = v < self.upper
        if mask is not None:
            better &= np.asarray(mask) | np.asarray(mask).T
        self.upper = np.where(better, v, self.upper)
        self.upper_src = np.where(better, source, self.upper_src)
        return int(np.triu(better).sum())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    def contains(self, X, tol: float = 1e-9) -> bool:
        return bool(np.all(X >= self.lower - tol) and np.all(X <= self.upper + tol))

    def worst_violation(self, X) -> float:
        return float(max(np.max(self.lower - X), np.max(X - self.upper), 0.0))

    def report(self, labels=None) -> list[dict]:
        out = []
        for i in range(self.n):
            for j in range(i, self.n):
                out.append({
                    "i": labels[i] if labels else i, "j": labels[j] if labels else j,
                    "lower": float(self.lower[i, j]), "upper": float(self.upper[i, j]),
                    "lower_source": self.lower_src[i, j], "upper_source": self.upper_src[i, j],
                })
        return out

    def source_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        iu = np.triu_indices(self.n)
        for side, arr in (("lower", self.lower_src), ("upper", self.upper_src)):
            for s in arr[iu]:
                key = f"{side}:{s or 'none'}"
                counts[key] = counts.get(key, 0) + 1
        return counts


class VariableLayout:
    """Canonical variable ordering: z by edge, X upper triangle row-major, then y by edge."""

    def __init__(self, network: PowerNetwork):
        self.network = network
        E, N = network.n_edges, network.n_reduced
        self.n_z = E
        self.x_of = {}
        k = E
        for i in range(N):
            for j in range(i, N):
                self.x_of[(i, j)] = k
                k += 1
        self.n_x = k - E
        self.y_of = {}
        self.y_rows = []  # (edge, i, j) per y variable with i <= j
        for ell, e in enumerate(network.edges):
            rows = [r - 1 for r in (e.i, e.j) if r > 0]
            for m in rows:
                for q in range(N):
                    key = (ell,) + (min(m, q), max(m, q))
                    if key not in self.y_of:
                        self.y_of[key] = k
                        self.y_rows.append(key)
                        k += 1
        self.n_y = len(self.y_rows)
        self.n_vars = k

    def z(self, ell: int) -> int:
        return ell

    def x(self, i: int, j: int) -> int:
        return self.x_of[(i, j) if i <= j else (j, i)]

    def y(self, ell: int, i: int, j: int) -> int:
        return self.y_of[(ell, min(i, j), max(i, j))]

    def names(self) -> list[str]:
        names = [f"z_{k}" for k in range(self.n_z)]
        names += [f"X_{i}_{j}" for (i, j) in self.x_of]
        names += [f"y_{ell}_{i}_{j}" for (ell, i, j) in self.y_rows]
        return names

    def unpack_x(self, values) -> np.ndarray:
        N = self.network.n_reduced
        X = np.zeros((N, N))
        for (i, j), k in self.x_of.items():
            X[i, j] = X[j, i] = values[k]
        return X

    def unpack_z(self, values) -> np.ndarray:
        return np.asarray(values[: self.n_z], dtype=float)


@dataclass
class MilpModel:
    layout: VariableLayout
    objective: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integrality: np.ndarray
    constraints: list[LinearConstraint]
    bounds: BoundBox
    fixed_edges: tuple[int, ...] = ()
    n_cuts: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_vars(self) -> int:
        return self.layout.n_vars

    def add_constraints(self, cons, cut: bool = False) -> None:
        self.constraints.extend(cons)
        if cut:
            self.n_cuts += len(cons)

    def copy(self) -> "MilpModel":
        return MilpModel(self.layout, self.objective.copy(), self.lb.copy(), self.ub.copy(),
                         self.integrality.copy(), list(self.constraints), self.bounds,
                         self.fixed_edges, self.n_cuts, dict(self.meta))

    def relaxed(self) -> "MilpModel":
        m = self.copy()
        m.integrality = np.zeros_like(self.integrality)
        return m

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.round(self.objective, 12).tobytes())
        h.update(np.round(np.nan_to_num(self.lb, posinf=1e300, neginf=-1e300), 12).tobytes())
        h.update(np.round(np.nan_to_num(self.ub, posinf=1e300, neginf=-1e300), 12).tobytes())
        for c in self.constraints:
            h.update(repr((sorted((k, round(v, 12)) for k, v in c.coeffs.items()), c.sense,
                           round(c.rhs, 12))).encode())
        return h.hexdigest()

    def max_violation(self, x) -> float:
        v = max((c.violation(x) for c in self.constraints), default=0.0)
        v = max(v, float(np.max(self.lb - x, initial=0.0)), float(np.max(x - self.ub, initial=0.0)))
        return v

    def to_lp(self) -> str:
        """Model in CPLEX LP text format."""
        names = self.layout.names()
        buf = io.StringIO()

        def expr(coeffs):
            parts = []
            for k, v in sorted(coeffs.items()):
                if v == 0:
                    continue
                parts.append(f"{'-' if v < 0 else '+'} {abs(v):.17g} {names[k]}")
            return " ".join(parts) if parts else "0 z_0"

        buf.write("\\ gridtopo topology design model\nMinimize\n obj: ")
        buf.write(expr({k: v for k, v in enumerate(self.objective) if v}) + "\nSubject To\n")
        ops = {LE: "<=", GE: ">=", EQ: "="}
        for r, c in enumerate(self.constraints):
            buf.write(f" {c.name or 'c'}_{r}: {expr(c.coeffs)} {ops[c.sense]} {c.rhs:.17g}\n")
        buf.write("Bounds\n")
        for k, name in enumerate(names):
            lo = "-inf" if np.isneginf(self.lb[k]) else f"{self.lb[k]:.17g}"
            hi = "+inf" if np.isposinf(self.ub[k]) else f"{self.ub[k]:.17g}"
            buf.write(f" {lo} <= {name} <= {hi}\n")
        bins = [names[k] for k in range(self.n_vars) if self.integrality[k]]
        if bins:
            buf.write("Binaries\n " + " ".join(bins) + "\n")
        buf.write("End\n")
        return buf.getvalue()


def mccormick_group(y: int, z: int, x: int, lower: float, upper: float,
                    name: str = "mc") -> list[LinearConstraint]:
    """The four envelopes linking ``y = z * X`` for binary ``z`` and ``X`` in [lower, upper]."""
    if not (np.isfinite(lower) and np.isfinite(upper)):
        raise ValueError("bound tightening must run first: McCormick needs finite bounds")
    if lower > upper:
        raise ValueError(f"empty interval [{lower}, {upper}]")
    return [
        LinearConstraint({y: 1.0, z: -lower}, GE, 0.0, name),
        LinearConstraint({y: 1.0, x: -1.0, z: -upper}, GE, -upper, name),
        LinearConstraint({y: 1.0, z: -upper}, LE, 0.0, name),
        LinearConstraint({y: 1.0, x: -1.0, z: -lower}, LE, -lower, name),
    ]


def identity_constraints(network: PowerNetwork, layout: VariableLayout) -> list[LinearConstraint]:
    """Rows of L(z) X = I with every z_l X_mq replaced by its auxiliary y."""
    N = network.n_reduced
    a = incidence_matrix(network)
    b = network.susceptances
    by_row: list[list[int]] = [[] for _ in range(N)]
    for ell in range(network.n_edges):
        for p in np.flatnonzero(a[ell]):
            by_row[p].append(ell)
    cons = []
    for p in range(N):
        for q in range(N):
            coeffs: dict[int, float] = {}
            for ell in by_row[p]:
                for m in np.flatnonzero(a[ell]):
                    k = layout.y(ell, m, q)
                    coeffs[k] = coeffs.get(k, 0.0) + b[ell] * a[ell, p] * a[ell, m]
            coeffs = {k: v for k, v in coeffs.items() if v != 0.0}
            cons.append(LinearConstraint(coeffs, EQ, 1.0 if p == q else 0.0, f"id_{p}_{q}"))
    return cons


def budget_constraint(network: PowerNetwork, K: int, mode: str, existing=None):
    """Cardinality rows plus the edges whose ``z`` is fixed to one.

    ``K`` is the total line budget for meshed design and the number of additional
    lines in augmentation mode; radial design forces exactly N lines.
    """
    N, E = network.n_reduced, network.n_edges
    if mode == "radial":
        return [LinearConstraint({k: 1.0 for k in range(E)}, EQ, float(N), "radial")], ()
    if mode == "meshed":
        if K < N:
            raise InfeasibleProblem("infeasible: cannot span")
        return [LinearConstraint({k: 1.0 for k in range(E)}, LE, float(K), "budget")], ()
    if mode == "augment":
        ex = network.existing_mask if existing is None else np.asarray(existing, dtype=bool)
        fixed = tuple(int(k) for k in np.flatnonzero(ex))
        new = [k for k in range(E) if not ex[k]]
        cons = []
        if new:
            cons.append(LinearConstraint({k: 1.0 for k in new}, LE, float(K), "budget_add"))
        return cons, fixed
    raise ValueError(f"unknown mode {mode!r}")


def apriori_valid_inequalities(layout: VariableLayout, Lf_inv: np.ndarray, critical=(),
                               dhat=None, epsilon: float = 1e-6) -> list[LinearConstraint]:
    """Resistance floors from the full graph, bridge resistance caps, and X_ii >= X_ij.

    ``critical`` holds ``(edge, near, far)`` dense-node triples; ``dhat`` is the
    dense all-pairs shortest reactance matrix over the candidate graph.
    """
    N = Lf_inv.shape[0]
    cons = []
    for i in range(N):
        for j in range(i + 1, N):
            rf = Lf_inv[i, i] + Lf_inv[j, j] - 2 * Lf_inv[i, j]
            cons.append(LinearConstraint(
                {layout.x(i, i): 1.0, layout.x(j, j): 1.0, layout.x(i, j): -2.0}, GE, rf, "rfloor"))
    for _, u, v in critical:
        cap = dhat[u, v] + epsilon
        coeffs: dict[int, float] = {}
        ru, rv = u - 1, v - 1
        if ru >= 0:
            coeffs[layout.x(ru, ru)] = coeffs.get(layout.x(ru, ru), 0.0) + 1.0
        if rv >= 0:
            coeffs[layout.x(rv, rv)] = coeffs.get(layout.x(rv, rv), 0.0) + 1.0
        if ru >= 0 and rv >= 0:
            coeffs[layout.x(ru, rv)] = -2.0
        cons.append(LinearConstraint(coeffs, LE, cap, "bridgecap"))
    for i in range(N):
        for j in range(N):
            if i != j:
                cons.append(LinearConstraint({layout.x(i, i): 1.0, layout.x(i, j): -1.0}, GE, 0.0, "mmat"))
    return cons


def objective_vector(layout: VariableLayout, Wr: np.ndarray) -> np.ndarray:
    """Coefficients of trace(W_r X) over the upper-triangle X variables."""
    c = np.zeros(layout.n_vars)
    for (i, j), k in layout.x_of.items():
        c[k] = Wr[i, i] if i == j else Wr[i, j] + Wr[j, i]
    return c


def assemble(problem: DesignProblem, bounds: BoundBox, extra_cuts=(), *, critical=(), dhat=None,
             Lf_inv=None, apriori: bool | None = None, fix_critical: bool = True) -> MilpModel:
    """Complete MILP: objective, identity rows, McCormick groups, budget, valid inequalities, cuts."""
    net = problem.network
    if not bounds.is_finite():
        raise ValueError("bound tightening must run first: McCormick needs finite bounds")
    layout = VariableLayout(net)
    c = objective_vector(layout, problem.objective.reduced_weights)
    lb = np.full(layout.n_vars, -np.inf)
    ub = np.full(layout.n_vars, np.inf)
    integ = np.zeros(layout.n_vars, dtype=np.uint8)
    lb[: layout.n_z], ub[: layout.n_z], integ[: layout.n_z] = 0.0, 1.0, 1
    for (i, j), k in layout.x_of.items():
        lb[k], ub[k] = bounds.lower[i, j], bounds.upper[i, j]
    for (ell, i, j), k in zip(layout.y_rows, range(layout.n_x + layout.n_z, layout.n_vars)):
        lb[k] = min(0.0, bounds.lower[i, j])
        ub[k] = max(0.0, bounds.upper[i, j])

    cons = identity_constraints(net, layout)
    for (ell, i, j) in layout.y_rows:
        cons += mccormick_group(layout.y(ell, i, j), layout.z(ell), layout.x(i, j),
                                bounds.lower[i, j], bounds.upper[i, j], f"mc_{ell}")
    budget, fixed = budget_constraint(net, problem.budget or 0, problem.mode, problem.existing)
    cons += budget
    fixed = set(fixed)
    if fix_critical:
        fixed |= {k for k, _, _ in critical}
    for k in sorted(fixed):
        lb[layout.z(k)] = 1.0
    use_apriori = problem.options.apriori if apriori is None else apriori
    if use_apriori and Lf_inv is not None:
        cons += apriori_valid_inequalities(layout, Lf_inv, critical, dhat, problem.options.epsilon)
    model = MilpModel(layout, c, lb, ub, integ, cons, bounds, tuple(sorted(fixed)))
    if extra_cuts:
        model.add_constraints(list(extra_cuts), cut=True)
    return model
