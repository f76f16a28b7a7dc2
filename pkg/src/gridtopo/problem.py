"""Design problem definition shared by formulation, tightening and engine."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from gridtopo.dynamics import StabilityObjective
from gridtopo.network import PowerNetwork

MODES = ("augment", "radial", "meshed")


class InfeasibleProblem(ValueError):
    pass


@dataclass(frozen=True)
class SolveOptions:
    epsilon: float = 1e-6
    gamma: float = -0.95
    sparsity_k: int = 1
    max_cuts: int = 10  # per separation round
    cut_budget: int = 200
    rounds: int = 5
    dense_cuts: bool = False
    random_cuts: int = 0
    gap: float = 1e-6
    time_limit: Optional[float] = None
    threads: int = 1
    lp_sweep: Optional[bool] = None  # None: on for radial/meshed, off for augment
    sweep_window: str = "sound"  # sound | incumbent
    apriori: bool = True
    seed: int = 0


@dataclass(frozen=True)
class DesignProblem:
    network: PowerNetwork
    objective: StabilityObjective
    mode: str = "meshed"
    budget: Optional[int] = None  # total lines (meshed), ignored (radial), additional lines (augment)
    options: SolveOptions = field(default_factory=SolveOptions)

    def __post_init__(self):
        if self.options.sweep_window not in ("sound", "incumbent"):
            raise ValueError("sweep_window must be 'sound' or 'incumbent'")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        n = self.network.n_reduced
        if self.mode == "radial" and self.budget not in (None, n):
            raise ValueError(f"radial design requires K = N = {n}")
        if self.mode == "meshed":
            if self.budget is None:
                object.__setattr__(self, "budget", self.network.n_edges)
            if self.budget < n:
                raise InfeasibleProblem("infeasible: cannot span")
        if self.mode == "augment":
            if self.budget is None or self.budget < 0:
                raise ValueError("augmentation needs a nonnegative additional-line budget")

    @property
    def n_reduced(self) -> int:
        return self.network.n_reduced

    @property
    def existing(self) -> np.ndarray:
        if self.mode == "augment":
            return self.network.existing_mask
        return np.zeros(self.network.n_edges, dtype=bool)

    @property
    def total_budget(self) -> int:
        if self.mode == "radial":
            return self.network.n_reduced
        if self.mode == "augment":
            return int(self.existing.sum()) + int(self.budget)
        return int(self.budget)

    @property
    def min_edges(self) -> int:
        return self.network.n_reduced if self.mode == "radial" else 0

    def with_options(self, **kw) -> "DesignProblem":
        return replace(self, options=replace(self.options, **kw))
