"""
Pydantic schemas for configs, traces and API requests/responses.
"""

import hashlib
import json
import math
from datetime import datetime
from enum import Enum
from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field, field_validator, model_validator


class Variant(str, Enum):
    """Outer-loop algorithm variants."""
    CGVAMP = "cgvamp"
    CGVAMP_ORACLE = "cgvamp_oracle"
    WS_PRACTICAL = "ws_practical"
    WS_ORACLE = "ws_oracle"

    @property
    def warm(self) -> bool:
        return self in (Variant.WS_PRACTICAL, Variant.WS_ORACLE)

    @property
    def oracle(self) -> bool:
        return self in (Variant.CGVAMP_ORACLE, Variant.WS_ORACLE)


# ===========================================
# Configuration models
# ===========================================

class OperatorSpec(BaseModel):
    """Measurement operator config (keys: kind, n, m, kappa, seed)."""
    kind: Literal["dense", "fijl"] = "fijl"
    n: int = Field(..., ge=1, description="Signal dimension N")
    m: int = Field(..., ge=1, description="Measurement dimension M")
    kappa: float = Field(1.0, ge=1.0, allow_inf_nan=False, description="Target condition number")
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_shape(self) -> "OperatorSpec":
        if self.m > self.n:
            raise ValueError(f"m ({self.m}) must not exceed n ({self.n})")
        return self

    @property
    def delta(self) -> float:
        return self.m / self.n


class DenoiserSpec(BaseModel):
    """Block B denoiser config (denoiser.kind, .lambda_mult, .divergence, .probes)."""
    kind: Literal["soft_threshold"] = "soft_threshold"
    lambda_mult: float = Field(1.4, ge=0.0, allow_inf_nan=False)
    # "sure" picks the threshold per call by minimizing Stein's unbiased risk
    threshold: Literal["fixed", "sure"] = "fixed"
    divergence: Literal["analytic", "monte_carlo"] = "analytic"
    probes: int = Field(1, ge=1)
    # None -> 1e-3 * sqrt(mean power of the input)
    epsilon: Optional[float] = Field(None, gt=0.0)
    # Seconds of artificial cost per call
    delay: float = Field(0.0, ge=0.0)


class AcgConfig(BaseModel):
    """Adaptive CG stopping parameters."""
    model_config = {"ser_json_inf_nan": "constants"}

    c: float = Field(0.9, gt=0.0, lt=1.0)
    delta_threshold: float = Field(0.015, gt=0.0, description="inf disables the criterion")
    i_max: int = Field(100, ge=1)

    @field_validator("delta_threshold")
    @classmethod
    def _not_nan(cls, value: float) -> float:
        if math.isnan(value):
            raise ValueError("delta_threshold must not be NaN")
        return value


def acg_label(delta_threshold: float) -> str:
    """Policy label of an adaptive run, e.g. acg-d0.015 or acg-dinf."""
    return f"acg-d{delta_threshold:g}"


class RunConfig(BaseModel):
    """One CG-VAMP run."""
    variant: Variant = Variant.CGVAMP
    acg: Optional[AcgConfig] = None
    fixed_iterations: Optional[int] = Field(None, ge=1, description="Fixed inner iterations instead of ACG")
    operator: OperatorSpec
    denoiser: DenoiserSpec = Field(default_factory=DenoiserSpec)
    snr_db: float = Field(40.0, allow_inf_nan=False)
    sparsity: float = Field(0.1, gt=0.0, le=1.0)
    t_max: int = Field(20, ge=1)
    epsilon: float = Field(1e-10, ge=0.0, description="Stop once v_ba_tilde drops below this")
    seed: int = Field(0, ge=0, description="Signal / noise / probe seed")
    # Use this noise variance instead of the true one (mis-specification runs)
    v_w_override: Optional[float] = Field(None, gt=0.0)
    v_ba_estimator: Literal["spectral", "trace"] = "spectral"
    oracle: bool = Field(True, description="Emit oracle_ columns")

    @model_validator(mode="after")
    def _check_policy(self) -> "RunConfig":
        if self.acg is not None and self.fixed_iterations is not None:
            raise ValueError("give either acg or fixed_iterations, not both")
        if self.acg is None and self.fixed_iterations is None:
            self.acg = AcgConfig()
        return self

    @property
    def policy_label(self) -> str:
        if self.fixed_iterations is not None:
            return f"i{self.fixed_iterations}"
        return acg_label(self.acg.delta_threshold)

    def config_hash(self) -> str:
        """Stable hash over every field that affects numerics."""
        payload = self.model_dump(mode="json", exclude={"oracle"})
        encoded = json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
        return hashlib.sha256(encoded).hexdigest()[:16]


class SweepSpec(BaseModel):
    """Grid of runs: deltas x kappas x variants x policies x seeds."""
    model_config = {"ser_json_inf_nan": "constants"}

    n: int = Field(16384, ge=2)
    deltas: List[float] = Field(..., min_length=1)
    kappas: List[float] = Field(..., min_length=1)
    variants: List[Variant] = Field(default_factory=lambda: [Variant.CGVAMP], min_length=1)
    # "acg" or a fixed inner-iteration count
    policies: List[Union[Literal["acg"], int]] = Field(default_factory=lambda: ["acg"], min_length=1)
    seeds: List[int] = Field(..., min_length=1)
    operator_kind: Literal["dense", "fijl"] = "fijl"
    operator_seed_offset: int = Field(1000, ge=0)
    acg: AcgConfig = Field(default_factory=AcgConfig)
    # Delta values swept for the acg policy; None keeps acg.delta_threshold
    acg_thresholds: Optional[List[float]] = Field(None, min_length=1)
    denoiser: DenoiserSpec = Field(default_factory=DenoiserSpec)
    snr_db: float = 40.0
    sparsity: float = Field(0.1, gt=0.0, le=1.0)
    t_max: int = Field(20, ge=1)
    v_ba_estimator: Literal["spectral", "trace"] = "spectral"
    oracle: bool = True
    output_dir: str = "./data/runs/sweep"

    @field_validator("deltas")
    @classmethod
    def _check_deltas(cls, values: List[float]) -> List[float]:
        if any(not 0.0 < d <= 1.0 for d in values):
            raise ValueError("every delta must lie in (0, 1]")
        return values

    @field_validator("policies")
    @classmethod
    def _check_policies(cls, values: list) -> list:
        if any(isinstance(p, int) and p < 1 for p in values):
            raise ValueError("fixed inner-iteration counts must be >= 1")
        return values

    @field_validator("acg_thresholds")
    @classmethod
    def _check_thresholds(cls, values: Optional[List[float]]) -> Optional[List[float]]:
        if values is not None and any(math.isnan(v) or v <= 0.0 for v in values):
            raise ValueError("every acg threshold must be positive (inf disables the criterion)")
        return values

    @property
    def thresholds(self) -> List[float]:
        return self.acg_thresholds if self.acg_thresholds is not None else [self.acg.delta_threshold]

    def spec_hash(self) -> str:
        payload = self.model_dump(mode="json", exclude={"output_dir"})
        encoded = json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
        return hashlib.sha256(encoded).hexdigest()[:16]


# ===========================================
# Trace records
# ===========================================

class InnerTraceRecord(BaseModel):
    """One CG iteration inside outer iteration t."""
    model_config = {"ser_json_inf_nan": "constants"}

    t: int
    i: int
    a: float
    b: float
    psi_bar: float
    nu_bar: float
    eta_bar: float
    zeta: float
    v_ab_tilde: float
    rel_residual: float
    flags: List[str] = Field(default_factory=list)


class TraceRecord(BaseModel):
    """One outer iteration: estimated scalars, oracle scalars, NMSE and timings."""
    model_config = {"ser_json_inf_nan": "constants"}

    t: int
    variant: str
    inner_iterations: int
    nmse: float
    nmse_db: float
    v_ba_tilde: float
    v_ab_tilde: float
    gamma_tilde: float
    gamma_b: float
    v_ab_se: float
    v_ba_se: float
    rel_residual: float
    time_block_a: float
    time_block_b: float
    elapsed: float
    flags: List[str] = Field(default_factory=list)
    oracle_v_ab: Optional[float] = None
    oracle_v_ba: Optional[float] = None
    oracle_gamma: Optional[float] = None
    oracle_corr: Optional[float] = None
    oracle_kurtosis: Optional[float] = None
    error: Optional[str] = None


class RunResult(BaseModel):
    """Trace of a single run."""
    config_hash: str
    seeds: dict
    rows: List[TraceRecord] = Field(default_factory=list)
    inner_rows: List[InnerTraceRecord] = Field(default_factory=list)
    error: Optional[str] = None

    @property
    def final_nmse_db(self) -> Optional[float]:
        return self.rows[-1].nmse_db if self.rows else None


class SummaryRow(BaseModel):
    """Mean/std across seeds for one grid cell and outer iteration."""
    cell: str
    t: int
    runs: int
    nmse_mean: float
    nmse_std: float
    nmse_db_mean: float
    inner_mean: float
    time_mean: float


class CellRecord(BaseModel):
    cell: str
    config_hash: str
    seed: int
    # Seeds of the instance: signal and noise, operator, divergence probes
    seeds: Dict[str, int] = Field(default_factory=dict)
    trace_path: Optional[str] = None
    inner_path: Optional[str] = None
    # Hash of the non-timing trace values
    trace_digest: Optional[str] = None
    error: Optional[str] = None


class SweepManifest(BaseModel):
    """Artifacts of one sweep."""
    spec_hash: str
    manifest_hash: str = ""
    cells: List[CellRecord] = Field(default_factory=list)
    summary_path: Optional[str] = None
    failures: int = 0


# ===========================================
# API models
# ===========================================

class RunRequest(BaseModel):
    """Request body for the run endpoint."""
    config: RunConfig

    model_config = {
        "json_schema_extra": {
            "examples": [
                {
                    "config": {
                        "variant": "cgvamp",
                        "operator": {"kind": "fijl", "n": 4096, "m": 1024, "kappa": 100, "seed": 1},
                        "acg": {"c": 0.9, "delta_threshold": 0.015, "i_max": 100},
                        "t_max": 10,
                        "seed": 0,
                    }
                }
            ]
        }
    }


class RunResponse(BaseModel):
    """Response body for the run endpoint."""
    model_config = {"ser_json_inf_nan": "constants"}

    config_hash: str
    rows: List[TraceRecord]
    final_nmse_db: Optional[float] = None
    error: Optional[str] = None
    timestamp: datetime = Field(default_factory=datetime.utcnow)


class AuditRequest(BaseModel):
    """Request body for the audit endpoint."""
    n: int = Field(16384, ge=64)
    seeds: List[int] = Field(default_factory=lambda: [0], min_length=1)


class AuditCheck(BaseModel):
    name: str
    value: float
    threshold: float
    passed: bool


class AuditReport(BaseModel):
    n: int
    seeds: List[int]
    checks: List[AuditCheck] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)


class EvaluationReport(BaseModel):
    """Sweep-level checks read back from written summaries and traces."""
    criterion: str
    checks: List[AuditCheck] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(check.passed for check in self.checks)


class HealthResponse(BaseModel):
    """Response for health check endpoint."""
    status: str = "healthy"
    version: str
    operator_kind: str
    signal_dim: int
    delta: float
    kappa: float
    timestamp: datetime = Field(default_factory=datetime.utcnow)
