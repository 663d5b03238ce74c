"""Pydantic models for configs, traces and API requests/responses."""

from app.models.schemas import (
    AcgConfig,
    AuditReport,
    AuditRequest,
    DenoiserSpec,
    HealthResponse,
    OperatorSpec,
    RunConfig,
    RunRequest,
    RunResponse,
    RunResult,
    SweepManifest,
    SweepSpec,
    TraceRecord,
    Variant,
)

__all__ = [
    "AcgConfig",
    "AuditReport",
    "AuditRequest",
    "DenoiserSpec",
    "HealthResponse",
    "OperatorSpec",
    "RunConfig",
    "RunRequest",
    "RunResponse",
    "RunResult",
    "SweepManifest",
    "SweepSpec",
    "TraceRecord",
    "Variant",
]
