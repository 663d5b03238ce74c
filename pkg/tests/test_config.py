"""Settings and solver-service defaults."""

from app.config import Settings
from app.services.solver_service import SolverService


def test_env_prefix(monkeypatch):
    monkeypatch.setenv("CGVAMP_KAPPA", "250")
    monkeypatch.setenv("CGVAMP_OPERATOR_KIND", "dense")
    settings = Settings()
    assert settings.kappa == 250.0
    assert settings.operator_kind == "dense"


def test_measurement_dim():
    assert Settings(signal_dim=1000, delta=0.25).measurement_dim == 250
    assert Settings(signal_dim=10, delta=0.01).measurement_dim == 1


def test_cors_origins_list():
    settings = Settings(cors_origins="http://a.test, http://b.test,")
    assert settings.cors_origins_list == ["http://a.test", "http://b.test"]


def test_default_config_follows_settings(settings):
    config = SolverService(settings).default_config(t_max=7)
    assert config.operator.n == 1024
    assert config.operator.m == 256
    assert config.operator.kappa == 10.0
    assert config.t_max == 7
    assert config.acg.c == settings.acg_c
    assert config.denoiser.lambda_mult == settings.lambda_mult


def test_solve_runs_default_config(settings):
    service = SolverService(settings)
    result = service.solve(service.default_config())
    assert len(result.rows) == settings.t_max
    assert service.get_stats()["signal_dim"] == 1024
