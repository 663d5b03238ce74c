"""
Solver service.

Combines:
- Operator construction from a run config
- Instance generation (signal, noise)
- The outer loop and the oracle audit suite
"""

import logging
from typing import List, Optional

from app.config import Settings, get_settings
from app.models.schemas import (
    AcgConfig,
    AuditReport,
    DenoiserSpec,
    OperatorSpec,
    RunConfig,
    RunResult,
)
from app.services.audit import run_audit
from app.services.operators import build_operator
from app.services.oracle import SystemInstance, make_instance
from app.services.outer_loop import run

logger = logging.getLogger(__name__)


class SolverService:
    """
    Entry point shared by the HTTP routes and the command-line runner.

    Flow:
    1. A RunConfig arrives (missing fields come from Settings)
    2. The operator and a seeded instance are built
    3. The outer loop runs and returns its trace
    """

    def __init__(self, settings: Settings):
        self.settings = settings

    def default_config(self, **overrides) -> RunConfig:
        """RunConfig assembled from the process-wide defaults."""
        s = self.settings
        fields = {
            "operator": OperatorSpec(
                kind=s.operator_kind, n=s.signal_dim, m=s.measurement_dim, kappa=s.kappa
            ),
            "acg": AcgConfig(c=s.acg_c, delta_threshold=s.acg_delta, i_max=s.acg_i_max),
            "denoiser": DenoiserSpec(
                kind=s.denoiser_kind,
                lambda_mult=s.lambda_mult,
                threshold=s.threshold_mode,
                divergence=s.divergence_mode,
                probes=s.mc_probes,
                delay=s.denoiser_delay,
            ),
            "snr_db": s.snr_db,
            "sparsity": s.sparsity,
            "t_max": s.t_max,
            "v_ba_estimator": s.v_ba_estimator,
        }
        fields.update(overrides)
        return RunConfig(**fields)

    def build_instance(self, config: RunConfig) -> SystemInstance:
        operator = build_operator(config.operator)
        return make_instance(
            operator,
            sparsity=config.sparsity,
            snr_db=config.snr_db,
            seed=config.seed,
            v_w_override=config.v_w_override,
        )

    def solve(self, config: RunConfig, instance: Optional[SystemInstance] = None) -> RunResult:
        """Run one configuration; solver errors come back on the result."""
        instance = instance or self.build_instance(config)
        return run(config, instance, v_ba_floor=self.settings.v_ba_floor)

    def audit(self, n: Optional[int] = None, seeds: Optional[List[int]] = None) -> AuditReport:
        return run_audit(n or self.settings.signal_dim, seeds or [0])

    def get_stats(self) -> dict:
        """Defaults the service runs with."""
        return {
            "operator_kind": self.settings.operator_kind,
            "signal_dim": self.settings.signal_dim,
            "delta": self.settings.delta,
            "kappa": self.settings.kappa,
        }


# Singleton instance
_solver_service: Optional[SolverService] = None


def get_solver_service() -> SolverService:
    """Get or create the solver service singleton."""
    global _solver_service
    if _solver_service is None:
        _solver_service = SolverService(settings=get_settings())
    return _solver_service
