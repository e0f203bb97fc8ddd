"""Optimal intervention in a currency target zone: value-function solver,
feedback policy and controlled-path simulator."""

from .bvp import (
    GridSolution,
    SolverConfig,
    SolverError,
    continuation_solve,
    solve_truncated_w,
    solve_u_bvp,
)
from .model import DriftSpec, ModelError, ModelParams
from .policy import PolicyFn, fit_blowup_rate, hamiltonian
from .simulator import SimConfig, estimate_cost, simulate_path
from .transform import DistanceFn, DomainError, TransformAnchor

__version__ = "0.1.0"

__all__ = [
    "DistanceFn",
    "DomainError",
    "DriftSpec",
    "GridSolution",
    "ModelError",
    "ModelParams",
    "PolicyFn",
    "SimConfig",
    "SolverConfig",
    "SolverError",
    "TransformAnchor",
    "continuation_solve",
    "estimate_cost",
    "fit_blowup_rate",
    "hamiltonian",
    "simulate_path",
    "solve_truncated_w",
    "solve_u_bvp",
]
