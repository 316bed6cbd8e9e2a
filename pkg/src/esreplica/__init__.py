"""Replica saddle-point solver for l1-regularized Expected Shortfall optimization."""

from .replica_core import (
    NO_SHORT,
    MarketModel,
    OrderParameters,
    Regularizer,
    ReplicaSolution,
    free_energy,
    saddle_residuals,
)
from .saddle_solver import (
    LeftPhysicalRegion,
    NoConvergence,
    SolveConfig,
    SweepResult,
    critical_point,
    solve_saddle,
    sweep,
    trace_boundary,
)

__version__ = "0.1.0"

__all__ = [
    "NO_SHORT", "MarketModel", "OrderParameters", "Regularizer", "ReplicaSolution",
    "free_energy", "saddle_residuals", "LeftPhysicalRegion", "NoConvergence", "SolveConfig",
    "SweepResult", "critical_point", "solve_saddle", "sweep", "trace_boundary",
]
