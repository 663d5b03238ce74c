"""Numerical services for cgvamp-lab."""

from app.services.solver_service import SolverService, get_solver_service

__all__ = [
    "SolverService",
    "get_solver_service",
]
