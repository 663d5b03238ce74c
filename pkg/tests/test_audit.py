"""Oracle audit suite at a small size (report shape, algebraic checks)."""

import numpy as np
import pytest

from app.services.audit import (
    AUDIT_KAPPA,
    WS_KAPPA,
    WS_WINDOW,
    build_audit_instance,
    build_warm_start_instance,
    correlation_trend,
    inner_consistency,
    run_audit,
    v_ba_estimator_error,
)


@pytest.fixture(scope="module")
def report():
    return run_audit(1024, [0])


def test_report_lists_every_check(report):
    names = [check.name for check in report.checks]
    assert names == [
        "gamma_consistency",
        "psi_bar_consistency",
        "zeta_identity",
        "v_ab_consistency",
        "decorrelation",
        "kurtosis",
        "v_ba_estimator",
        "ws_practical_correlation_growth",
        "ws_practical_correlation_slope",
    ]
    assert report.n == 1024 and report.seeds == [0]


def test_zeta_identity_holds_at_any_size(report):
    (zeta,) = [check for check in report.checks if check.name == "zeta_identity"]
    assert zeta.passed


def test_decorrelation_threshold_widens_at_small_n(report):
    (corr,) = [check for check in report.checks if check.name == "decorrelation"]
    assert corr.threshold == pytest.approx(3.0 / 32.0)


def test_report_serializes(report):
    payload = report.model_dump_json()
    assert "ws_practical_correlation_growth" in payload


def test_inner_consistency_is_deterministic():
    instance = build_audit_instance(512, 3)
    assert inner_consistency(instance, 3) == inner_consistency(instance, 3)


def test_instances_use_their_own_conditioning():
    assert build_audit_instance(512, 0).operator.condition_number == pytest.approx(AUDIT_KAPPA)
    assert build_warm_start_instance(2048, 0).operator.condition_number == pytest.approx(WS_KAPPA)


def test_v_ba_estimator_error_is_deterministic():
    instance = build_audit_instance(1024, 1)
    first = v_ba_estimator_error(instance, 1)
    assert first == v_ba_estimator_error(instance, 1)
    assert first >= 0.0


class TestCorrelationTrend:
    def test_growing_curves(self):
        t = np.arange(31)
        curves = [0.01 + 0.002 * t, 0.02 + 0.001 * t]
        ratio, slope = correlation_trend(curves)
        assert ratio > 1.0
        assert slope == pytest.approx(0.0015)

    def test_flat_curves(self):
        ratio, slope = correlation_trend([np.full(20, 0.05)] * 3)
        assert ratio == pytest.approx(1.0)
        assert slope == pytest.approx(0.0, abs=1e-12)

    def test_curves_are_cut_to_the_shortest(self):
        long = np.concatenate([np.full(2 * WS_WINDOW, 0.01), np.full(10, 1.0)])
        short = np.full(2 * WS_WINDOW, 0.01)
        ratio, _ = correlation_trend([long, short])
        assert ratio == pytest.approx(1.0)

    def test_too_short_has_no_trend(self):
        assert correlation_trend([np.arange(2 * WS_WINDOW - 1, dtype=float)]) == (0.0, 0.0)
