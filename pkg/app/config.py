"""
Configuration management with environment variables.
Holds the desk-scale defaults every run and sweep falls back on.
"""

from functools import lru_cache
from pathlib import Path
from typing import List, Literal

from pydantic_settings import BaseSettings

# Ensure we load .env from the correct location
_env_file = Path(__file__).parent.parent / ".env"
if _env_file.exists():
    from dotenv import load_dotenv
    load_dotenv(_env_file)


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    # ===========================================
    # Measurement system
    # ===========================================
    # "fijl" is O(N log N); "dense" keeps its SVD and is only sensible for small N
    operator_kind: Literal["dense", "fijl"] = "fijl"
    signal_dim: int = 16384
    delta: float = 0.25
    kappa: float = 100.0
    snr_db: float = 40.0
    # Bernoulli-Gaussian prior: fraction of non-zero entries
    sparsity: float = 0.1

    # ===========================================
    # Adaptive CG (Block A)
    # ===========================================
    acg_c: float = 0.9
    acg_delta: float = 0.015
    acg_i_max: int = 100

    # ===========================================
    # Denoiser (Block B)
    # ===========================================
    denoiser_kind: Literal["soft_threshold"] = "soft_threshold"
    lambda_mult: float = 1.4
    # "sure" picks the threshold per call from Stein's unbiased risk
    threshold_mode: Literal["fixed", "sure"] = "fixed"
    divergence_mode: Literal["analytic", "monte_carlo"] = "analytic"
    mc_probes: int = 1
    # Artificial per-call delay in seconds (0 disables)
    denoiser_delay: float = 0.0

    # ===========================================
    # Outer loop
    # ===========================================
    t_max: int = 20
    v_ba_floor: float = 1e-10
    v_ba_estimator: Literal["spectral", "trace"] = "spectral"

    # ===========================================
    # Harness
    # ===========================================
    output_dir: str = "./data/runs"
    sweep_workers: int = 4

    # ===========================================
    # Server Configuration
    # ===========================================
    host: str = "0.0.0.0"
    port: int = 8001
    log_level: str = "INFO"
    cors_origins: str = "*"

    class Config:
        env_prefix = "CGVAMP_"
        env_file = ".env"
        env_file_encoding = "utf-8"
        extra = "ignore"

    @property
    def cors_origins_list(self) -> List[str]:
        return [origin.strip() for origin in self.cors_origins.split(",") if origin.strip()]

    @property
    def measurement_dim(self) -> int:
        """M = round(delta * N), at least one row."""
        return max(1, int(round(self.delta * self.signal_dim)))


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
