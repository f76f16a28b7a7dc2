"""MILP backend interface and the HiGHS implementation shipped with scipy."""
from __future__ import annotations

import abc
import logging
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint as SciConstraint, linprog, milp

from gridtopo.formulation import EQ, GE, LE, MilpModel

logger = logging.getLogger(__name__)


@dataclass
class SolverResult:
    status: str  # optimal | time_limit | infeasible | unbounded | error
    x: Optional[np.ndarray]
    objective: float
    dual_bound: float = float("nan")
    gap: float = float("nan")
    node_count: int = 0
    seconds: float = 0.0
    message: str = ""

    @property
    def has_solution(self) -> bool:
        return self.x is not None


class MilpBackend(abc.ABC):
    name = "abstract"

    @abc.abstractmethod
    def solve_lp(self, model: MilpModel, *, tight: bool = False) -> SolverResult:
        """Continuous relaxation (integrality dropped)."""

    @abc.abstractmethod
    def solve_milp(self, model: MilpModel, *, gap: float = 1e-6,
                   time_limit: Optional[float] = None) -> SolverResult:
        """Integer solve to the given relative gap."""


def _rows(model: MilpModel):
    data, ri, ci = [], [], []
    lo = np.empty(len(model.constraints))
    hi = np.empty(len(model.constraints))
    for r, c in enumerate(model.constraints):
        for k, v in c.coeffs.items():
            ri.append(r)
            ci.append(k)
            data.append(v)
        lo[r] = c.rhs if c.sense in (GE, EQ) else -np.inf
        hi[r] = c.rhs if c.sense in (LE, EQ) else np.inf
    A = sp.csr_matrix((data, (ri, ci)), shape=(len(model.constraints), model.n_vars))
    return A, lo, hi


_LP_STATUS = {0: "optimal", 1: "time_limit", 2: "infeasible", 3: "unbounded", 4: "error"}


class HighsBackend(MilpBackend):
    """scipy.optimize.milp / linprog (HiGHS)."""

    name = "highs"

    def __init__(self, presolve: bool = True, mip_presolve: bool = False):
        # HiGHS MILP presolve has returned wrong optima on these models (a feasible
        # better point cut off), so it is off unless asked for
        self.presolve = presolve
        self.mip_presolve = mip_presolve

    def solve_lp(self, model: MilpModel, *, tight: bool = False) -> SolverResult:
        res = self._solve_lp(model, tight, self.presolve)
        if res.status == "infeasible" and self.presolve:
            # presolve can misjudge nearly degenerate bound intervals; confirm without it
            res = self._solve_lp(model, tight, False)
        return res

    def _solve_lp(self, model: MilpModel, tight: bool, presolve: bool) -> SolverResult:
        A, lo, hi = _rows(model)
        eq = lo == hi
        ub_rows = ~eq & np.isfinite(hi)
        lb_rows = ~eq & np.isfinite(lo)
        A_ub = sp.vstack([A[ub_rows], -A[lb_rows]]).tocsr()
        b_ub = np.concatenate([hi[ub_rows], -lo[lb_rows]])
        options = {"presolve": presolve}
        if tight:
            options.update(primal_feasibility_tolerance=1e-10, dual_feasibility_tolerance=1e-10)
        t0 = time.perf_counter()
        res = linprog(model.objective, A_ub=A_ub if A_ub.shape[0] else None,
                      b_ub=b_ub if A_ub.shape[0] else None,
                      A_eq=A[eq] if eq.any() else None, b_eq=lo[eq] if eq.any() else None,
                      bounds=np.column_stack([model.lb, model.ub]), method="highs", options=options)
        status = _LP_STATUS.get(res.status, "error")
        x = np.asarray(res.x) if res.x is not None and status == "optimal" else None
        obj = float(res.fun) if x is not None else float("nan")
        return SolverResult(status, x, obj, obj, 0.0, 0, time.perf_counter() - t0, res.message)

    def solve_milp(self, model: MilpModel, *, gap: float = 1e-6,
                   time_limit: Optional[float] = None) -> SolverResult:
        res = self._solve_milp(model, gap, time_limit, self.mip_presolve)
        if res.status == "infeasible" and self.mip_presolve:
            res = self._solve_milp(model, gap, time_limit, False)
        return res

    def _solve_milp(self, model, gap, time_limit, presolve) -> SolverResult:
        A, lo, hi = _rows(model)
        options = {"mip_rel_gap": gap, "presolve": presolve}
        if time_limit:
            options["time_limit"] = float(time_limit)
        t0 = time.perf_counter()
        res = milp(model.objective, integrality=model.integrality,
                   bounds=Bounds(model.lb, model.ub),
                   constraints=[SciConstraint(A, lo, hi)] if A.shape[0] else None, options=options)
        secs = time.perf_counter() - t0
        status = _LP_STATUS.get(res.status, "error")
        x = np.asarray(res.x) if res.x is not None else None
        if status == "time_limit" and x is None:
            status = "error"
            msg = "time limit reached before any incumbent"
        else:
            msg = res.message
        obj = float(res.fun) if x is not None else float("nan")
        return SolverResult(status, x, obj,
                            float(getattr(res, "mip_dual_bound", np.nan) or np.nan),
                            float(getattr(res, "mip_gap", np.nan) or 0.0),
                            int(getattr(res, "mip_node_count", 0) or 0), secs, msg)


def default_backend() -> MilpBackend:
    return HighsBackend()
