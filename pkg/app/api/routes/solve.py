"""
Solver endpoints: single runs and the oracle audit.
"""

import logging
from datetime import datetime

from fastapi import APIRouter, HTTPException

from app.models.schemas import AuditReport, AuditRequest, RunRequest, RunResponse
from app.services.solver_service import get_solver_service
from app.utils.errors import CgVampError

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/api", tags=["Solver"])


@router.post("/run", response_model=RunResponse)
def run_solver(request: RunRequest):
    """
    Run CG-VAMP on a freshly drawn instance.

    The instance (operator, signal, noise) is rebuilt from the seeds in the
    config, so the same request always returns the same trace apart from
    the timing columns.

    **Example Request:**
    ```json
    {
        "config": {
            "variant": "cgvamp",
            "operator": {"kind": "fijl", "n": 4096, "m": 1024, "kappa": 100, "seed": 1},
            "t_max": 10,
            "seed": 0
        }
    }
    ```

    A run that stops early returns its partial trace with ``error`` set; a
    run that fails before the first outer iteration is a 500.
    """
    service = get_solver_service()
    try:
        instance = service.build_instance(request.config)
    except ValueError as e:
        logger.error(f"Invalid run request: {e}", exc_info=True)
        raise HTTPException(status_code=422, detail=str(e))

    try:
        result = service.solve(request.config, instance)
    except CgVampError as e:
        logger.error(f"Solver error: {e}", exc_info=True)
        raise HTTPException(status_code=500, detail=f"Solver failed: {e}")

    if result.error and not result.rows:
        raise HTTPException(status_code=500, detail=f"Solver failed: {result.error}")

    return RunResponse(
        config_hash=result.config_hash,
        rows=result.rows,
        final_nmse_db=result.final_nmse_db,
        error=result.error,
        timestamp=datetime.utcnow(),
    )


@router.post("/audit", response_model=AuditReport)
def audit(request: AuditRequest):
    """Run the oracle consistency suite and return one check per estimator."""
    try:
        return get_solver_service().audit(n=request.n, seeds=request.seeds)
    except CgVampError as e:
        logger.error(f"Audit error: {e}", exc_info=True)
        raise HTTPException(status_code=500, detail=f"Audit failed: {e}")
