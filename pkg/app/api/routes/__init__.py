"""API route modules."""

from app.api.routes.health import router as health_router
from app.api.routes.solve import router as solve_router

__all__ = ["health_router", "solve_router"]
