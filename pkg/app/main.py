"""
cgvamp-lab - FastAPI Application

HTTP access to the CG-VAMP compressed-sensing solvers and their oracle audit.
"""

import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app import __version__
from app.config import get_settings
from app.api.routes import health_router, solve_router

# Configure logging
logging.basicConfig(
    level=get_settings().log_level.upper(),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    """
    Application lifespan handler.

    Logs the solver defaults and creates the solver service on startup.
    """
    settings = get_settings()
    logger.info("=" * 50)
    logger.info("Starting cgvamp-lab")
    logger.info(f"Version: {__version__}")
    logger.info(f"Operator: {settings.operator_kind} N={settings.signal_dim} M={settings.measurement_dim}")
    logger.info(f"Condition number: {settings.kappa:g}, SNR: {settings.snr_db:g} dB")
    logger.info(f"ACG: c={settings.acg_c} delta={settings.acg_delta} i_max={settings.acg_i_max}")
    logger.info("=" * 50)

    # Reject bad defaults at startup rather than on the first request
    try:
        from app.services import get_solver_service
        from app.services.operators import MAX_DENSE_ENTRIES

        solver_service = get_solver_service()
        config = solver_service.default_config()
        logger.info(f"Default run config hash: {config.config_hash()}")

        if config.operator.kind == "dense" and config.operator.n * config.operator.m > MAX_DENSE_ENTRIES:
            logger.warning(
                "Default dense operator is too large to build. "
                "Set CGVAMP_OPERATOR_KIND=fijl or lower CGVAMP_SIGNAL_DIM."
            )
    except Exception as e:
        logger.error(f"Failed to initialize services: {e}")
        raise

    logger.info("cgvamp-lab is ready!")
    logger.info(f"API docs available at: http://{settings.host}:{settings.port}/docs")

    yield

    logger.info("Shutting down cgvamp-lab...")


# Create FastAPI application
app = FastAPI(
    title="cgvamp-lab",
    description="""
    Conjugate-gradient VAMP for compressed sensing with ill-conditioned operators.

    ## Features
    - Adaptive CG inner loop with on-the-fly divergence and variance estimates
    - Cold-start, practical warm-start and oracle warm-start variants
    - Fast ill-conditioned Johnson-Lindenstrauss and dense operators
    - Oracle audit of every estimator against ground truth
    """,
    version=__version__,
    lifespan=lifespan,
    docs_url="/docs",
    redoc_url="/redoc",
)

# Configure CORS
settings = get_settings()
app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.cors_origins_list,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Include routers
app.include_router(health_router)
app.include_router(solve_router)


# Main entry point
if __name__ == "__main__":
    import uvicorn

    uvicorn.run(
        "app.main:app",
        host=settings.host,
        port=settings.port,
        reload=True,
        log_level=settings.log_level.lower(),
    )
