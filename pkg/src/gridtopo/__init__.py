"""Stability-optimal power grid topology design.

Selects transmission lines that minimize an H2 stability metric, either by
augmenting an existing grid or by designing radial and meshed networks, through
an exact mixed-integer linear program with bound tightening and eigenvector cuts.
"""
__version__ = "0.1.0"

from gridtopo.dynamics import StabilityObjective, closed_form_objective, h2_squared  # noqa: E402
from gridtopo.engine import (TopologySolution, greedy_augment, greedy_guarantee,  # noqa: E402
                             node_change, parallel_decomposition, solve, solve_decomposed,
                             supermodularity_check)
from gridtopo.network import Node, PowerNetwork, build_network  # noqa: E402
from gridtopo.oracle import enumerate_optimal, verify_solution  # noqa: E402
from gridtopo.problem import DesignProblem, InfeasibleProblem, SolveOptions  # noqa: E402

__all__ = [
    "__version__", "Node", "PowerNetwork", "build_network", "StabilityObjective", "DesignProblem",
    "SolveOptions", "InfeasibleProblem", "TopologySolution", "solve", "solve_decomposed",
    "greedy_augment", "greedy_guarantee", "supermodularity_check", "parallel_decomposition",
    "node_change", "enumerate_optimal", "verify_solution", "closed_form_objective", "h2_squared",
]
