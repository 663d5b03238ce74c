"""Tests for the Block B denoisers and the Onsager correction."""

import numpy as np
import pytest

from app.models.schemas import DenoiserSpec
from app.services import denoising
from app.services.denoising import (
    CostedDenoiser,
    FunctionDenoiser,
    SoftThresholdDenoiser,
    analytic_divergence_soft_threshold,
    block_b_update,
    create_denoiser,
    mc_divergence,
    soft_threshold,
    sure_threshold,
)
from app.utils.errors import InvalidParameterError, NumericInputError, OnsagerDegenerateError


class TestSoftThreshold:
    def test_example(self):
        out = soft_threshold(np.array([3.0, -0.5]), 1.0, 1.0)
        np.testing.assert_allclose(out, [2.0, 0.0])

    def test_zero_variance_is_identity(self, rng):
        r = rng.standard_normal(100)
        np.testing.assert_array_equal(soft_threshold(r, 0.0, 1.4), r)

    def test_shrinks_and_is_lipschitz(self, rng):
        a = rng.standard_normal(500)
        b = rng.standard_normal(500)
        ga = soft_threshold(a, 0.5, 1.4)
        gb = soft_threshold(b, 0.5, 1.4)
        assert np.all(np.abs(ga) <= np.abs(a))
        assert np.all(np.abs(ga - gb) <= np.abs(a - b) + 1e-15)

    def test_rejects_negative_variance(self):
        with pytest.raises(InvalidParameterError):
            soft_threshold(np.ones(3), -1.0, 1.0)


class TestSureThreshold:
    @staticmethod
    def brute_force(r, v):
        def risk(tau):
            return r.size * v - 2 * v * np.sum(np.abs(r) <= tau) + np.sum(np.minimum(r * r, tau * tau))

        candidates = np.abs(r)
        return candidates[np.argmin([risk(tau) for tau in candidates])]

    def test_matches_brute_force(self, rng):
        x = np.where(rng.random(300) < 0.1, 3.0 * rng.standard_normal(300), 0.0)
        r = x + np.sqrt(0.5) * rng.standard_normal(300)
        assert sure_threshold(r, 0.5) == pytest.approx(self.brute_force(r, 0.5), rel=1e-12)

    def test_pure_noise_is_nearly_zeroed(self, rng):
        r = rng.standard_normal(10000)
        out = create_denoiser(DenoiserSpec(threshold="sure"))(r, 1.0)
        assert np.mean(out ** 2) < 0.1

    def test_strong_sparse_signal_keeps_a_moderate_level(self, rng):
        n = 10000
        x = np.where(rng.random(n) < 0.05, 10.0 * rng.standard_normal(n), 0.0)
        r = x + rng.standard_normal(n)
        tau = sure_threshold(r, 1.0)
        assert 1.0 < tau < 4.0
        denoiser = SoftThresholdDenoiser(threshold="sure")
        assert np.mean((denoiser(r, 1.0) - x) ** 2) < np.mean((r - x) ** 2)

    def test_divergence_uses_selected_level(self, rng):
        r = rng.standard_normal(400)
        denoiser = SoftThresholdDenoiser(threshold="sure")
        tau = sure_threshold(r, 1.0)
        assert denoiser.divergence(r, 1.0) == pytest.approx(np.mean(np.abs(r) > tau))

    def test_zero_variance_is_identity(self, rng):
        r = rng.standard_normal(50)
        np.testing.assert_array_equal(SoftThresholdDenoiser(threshold="sure")(r, 0.0), r)

    def test_rejects_unknown_mode(self):
        with pytest.raises(InvalidParameterError):
            SoftThresholdDenoiser(threshold="minimax")

    def test_rejects_negative_variance(self):
        with pytest.raises(InvalidParameterError):
            sure_threshold(np.ones(3), -1.0)


class TestDivergence:
    def test_analytic_all_below_threshold(self):
        assert analytic_divergence_soft_threshold(np.full(10, 0.1), 1.0, 1.0) == 0.0

    def test_analytic_zero_threshold(self, rng):
        assert analytic_divergence_soft_threshold(rng.standard_normal(10), 0.0, 1.4) == 1.0

    def test_analytic_counts_survivors(self):
        r = np.array([0.5, 2.0, -3.0, 0.9])
        assert analytic_divergence_soft_threshold(r, 1.0, 1.0) == 0.5

    def test_mc_identity(self, rng):
        r = rng.standard_normal(1000)
        assert mc_divergence(lambda u, v: u, r, 1.0, seed=3) == pytest.approx(1.0, abs=1e-9)

    def test_mc_zero_denoiser(self, rng):
        r = rng.standard_normal(1000)
        assert mc_divergence(lambda u, v: np.zeros_like(u), r, 1.0) == 0.0

    def test_mc_matches_analytic_soft_threshold(self, rng):
        r = 2.0 * rng.standard_normal(4096)
        denoiser = SoftThresholdDenoiser(lambda_mult=1.4)
        analytic = denoiser.analytic_divergence(r, 1.0)
        estimate = mc_divergence(denoiser, r, 1.0, seed=11)
        assert abs(estimate - analytic) <= 0.02

    def test_mc_is_seeded(self, rng):
        r = rng.standard_normal(256)

        def g(u, v):
            return np.tanh(u)

        assert mc_divergence(g, r, 1.0, seed=5) == mc_divergence(g, r, 1.0, seed=5)

    def test_mc_rejects_non_finite_output(self, rng):
        with pytest.raises(NumericInputError):
            mc_divergence(lambda u, v: np.full_like(u, np.nan), rng.standard_normal(8), 1.0)

    def test_mc_rejects_bad_arguments(self, rng):
        r = rng.standard_normal(8)
        with pytest.raises(InvalidParameterError):
            mc_divergence(lambda u, v: u, r, 1.0, probes=0)
        with pytest.raises(InvalidParameterError):
            mc_divergence(lambda u, v: u, r, 1.0, epsilon=-1.0)

    def test_mode_selection(self, rng):
        r = rng.standard_normal(2048)
        analytic = SoftThresholdDenoiser(1.0, divergence_mode="analytic")
        monte_carlo = SoftThresholdDenoiser(1.0, divergence_mode="monte_carlo")
        assert analytic.divergence(r, 1.0) == analytic_divergence_soft_threshold(r, 1.0, 1.0)
        assert monte_carlo.divergence(r, 1.0, seed=2) == pytest.approx(analytic.divergence(r, 1.0), abs=0.02)

    def test_function_denoiser_has_no_analytic_divergence(self, rng):
        denoiser = FunctionDenoiser(lambda u, v: 0.5 * u)
        with pytest.raises(NotImplementedError):
            denoiser.analytic_divergence(rng.standard_normal(4), 1.0)
        assert denoiser.divergence(rng.standard_normal(64), 1.0) == pytest.approx(0.5, abs=1e-9)


class TestBlockB:
    def test_onsager_correction(self, rng):
        x_ab = rng.standard_normal(1000)
        denoiser = SoftThresholdDenoiser(lambda_mult=1.4)
        result = block_b_update(x_ab, 1.0, denoiser)
        gamma = analytic_divergence_soft_threshold(x_ab, 1.0, 1.4)
        assert result.gamma_b == gamma
        np.testing.assert_allclose(result.mu_b, soft_threshold(x_ab, 1.0, 1.4))
        np.testing.assert_allclose(result.x_ba, (result.mu_b - gamma * x_ab) / (1.0 - gamma))

    def test_zero_divergence_passes_estimate_through(self, rng):
        x_ab = rng.standard_normal(100)
        result = block_b_update(x_ab, 1.0, SoftThresholdDenoiser(lambda_mult=100.0))
        assert result.gamma_b == 0.0
        np.testing.assert_array_equal(result.x_ba, result.mu_b)

    def test_identity_denoiser_is_degenerate(self, rng):
        with pytest.raises(OnsagerDegenerateError):
            block_b_update(rng.standard_normal(100), 1.0, FunctionDenoiser(lambda u, v: u))


class TestFactory:
    def test_default(self):
        denoiser = create_denoiser(DenoiserSpec())
        assert isinstance(denoiser, SoftThresholdDenoiser)
        assert denoiser.lambda_mult == 1.4
        assert denoiser.divergence_mode == "analytic"

    def test_monte_carlo_options(self):
        denoiser = create_denoiser(DenoiserSpec(divergence="monte_carlo", probes=3, epsilon=1e-4))
        assert denoiser.divergence_mode == "monte_carlo"
        assert denoiser.probes == 3 and denoiser.epsilon == 1e-4

    def test_delay_wraps_denoiser(self, monkeypatch, rng):
        sleeps = []
        monkeypatch.setattr(denoising.time, "sleep", sleeps.append)
        denoiser = create_denoiser(DenoiserSpec(delay=0.05))
        assert isinstance(denoiser, CostedDenoiser)

        r = rng.standard_normal(50)
        np.testing.assert_array_equal(denoiser(r, 1.0), soft_threshold(r, 1.0, 1.4))
        assert sleeps == [0.05]
        assert denoiser.divergence(r, 1.0) == analytic_divergence_soft_threshold(r, 1.0, 1.4)

    def test_threshold_mode(self):
        assert create_denoiser(DenoiserSpec()).threshold == "fixed"
        assert create_denoiser(DenoiserSpec(threshold="sure")).threshold == "sure"
