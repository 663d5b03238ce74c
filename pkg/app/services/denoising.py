"""
Swappable Block B denoisers.

Supports:
- "soft_threshold": separable soft thresholding with an analytic divergence,
  at a fixed multiple of the noise level or at the SURE-optimal level
- Monte-Carlo ("black-box") divergence for any denoiser
- CostedDenoiser: wraps a denoiser with an artificial per-call delay

To add a denoiser, subclass BaseDenoiser and register it in create_denoiser.
"""

import logging
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from app.models.schemas import DenoiserSpec
from app.utils.errors import InvalidParameterError, NumericInputError, OnsagerDegenerateError

logger = logging.getLogger(__name__)

# gamma_B >= 1 - this aborts the outer loop
ONSAGER_MARGIN = 1e-6


def soft_threshold(r: np.ndarray, v: float, lambda_mult: float) -> np.ndarray:
    """x_k = sign(r_k) * max(|r_k| - tau, 0) with tau = lambda_mult * sqrt(v)."""
    if v < 0.0:
        raise InvalidParameterError(f"noise variance must be non-negative, got {v}")
    tau = lambda_mult * np.sqrt(v)
    return np.sign(r) * np.maximum(np.abs(r) - tau, 0.0)


def sure_threshold(r: np.ndarray, v: float) -> float:
    """
    Soft-threshold level minimizing Stein's unbiased risk estimate.

    SURE(tau) = N v - 2 v #{|r_k| <= tau} + sum_k min(r_k^2, tau^2), searched
    over every |r_k|. tau = 0 is left out: the identity has divergence one and
    the Onsager correction is undefined for it.
    """
    if v < 0.0:
        raise InvalidParameterError(f"noise variance must be non-negative, got {v}")
    n = r.shape[0]
    squares = np.sort(r * r)
    k = np.arange(1, n + 1)
    risk = n * v - 2.0 * v * k + np.cumsum(squares) + (n - k) * squares
    return float(np.sqrt(squares[int(np.argmin(risk))]))


def analytic_divergence_soft_threshold(r: np.ndarray, v: float, lambda_mult: float) -> float:
    """Fraction of entries that survive the threshold."""
    if v < 0.0:
        raise InvalidParameterError(f"noise variance must be non-negative, got {v}")
    tau = lambda_mult * np.sqrt(v)
    if tau == 0.0:
        return 1.0
    return float(np.count_nonzero(np.abs(r) > tau) / r.shape[0])


class BaseDenoiser(ABC):
    """Abstract base class for denoisers g_B(r, v)."""

    divergence_mode: str = "monte_carlo"

    def __init__(self, probes: int = 1, epsilon: Optional[float] = None):
        self.probes = probes
        self.epsilon = epsilon

    @abstractmethod
    def denoise(self, r: np.ndarray, v: float) -> np.ndarray:
        """Estimate x from r = x + noise of variance v."""
        pass

    def __call__(self, r: np.ndarray, v: float) -> np.ndarray:
        return self.denoise(r, v)

    def analytic_divergence(self, r: np.ndarray, v: float) -> float:
        raise NotImplementedError(f"{type(self).__name__} has no analytic divergence")

    def divergence(self, r: np.ndarray, v: float, seed: int = 0) -> float:
        """gamma_B = (1/N) div g_B, analytic when configured, Monte-Carlo otherwise."""
        if self.divergence_mode == "analytic":
            return self.analytic_divergence(r, v)
        return mc_divergence(self, r, v, epsilon=self.epsilon, probes=self.probes, seed=seed)


class SoftThresholdDenoiser(BaseDenoiser):
    """Separable soft thresholding; near-MMSE for Bernoulli-Gaussian signals."""

    def __init__(
        self,
        lambda_mult: float = 1.4,
        divergence_mode: str = "analytic",
        probes: int = 1,
        epsilon: Optional[float] = None,
        threshold: str = "fixed",
    ):
        super().__init__(probes=probes, epsilon=epsilon)
        if threshold not in ("fixed", "sure"):
            raise InvalidParameterError(f"Unknown threshold mode: {threshold}")
        self.lambda_mult = lambda_mult
        self.divergence_mode = divergence_mode
        self.threshold = threshold

    def _multiplier(self, r: np.ndarray, v: float) -> float:
        """lambda_mult, or the SURE level expressed in units of sqrt(v)."""
        if self.threshold == "fixed" or v == 0.0:
            return self.lambda_mult
        return sure_threshold(r, v) / np.sqrt(v)

    def denoise(self, r: np.ndarray, v: float) -> np.ndarray:
        return soft_threshold(r, v, self._multiplier(r, v))

    def analytic_divergence(self, r: np.ndarray, v: float) -> float:
        # The data dependence of the SURE level is ignored, as in SURE-tuned AMP
        return analytic_divergence_soft_threshold(r, v, self._multiplier(r, v))


class FunctionDenoiser(BaseDenoiser):
    """Any callable g(r, v) with Monte-Carlo divergence."""

    def __init__(self, fn: Callable[[np.ndarray, float], np.ndarray], probes: int = 1, epsilon: Optional[float] = None):
        super().__init__(probes=probes, epsilon=epsilon)
        self.fn = fn

    def denoise(self, r: np.ndarray, v: float) -> np.ndarray:
        return self.fn(r, v)


class CostedDenoiser(BaseDenoiser):
    """Adds ``delay`` seconds to every denoiser call (emulates an expensive denoiser)."""

    def __init__(self, inner: BaseDenoiser, delay: float):
        super().__init__(probes=inner.probes, epsilon=inner.epsilon)
        self.inner = inner
        self.delay = delay
        self.divergence_mode = inner.divergence_mode

    def denoise(self, r: np.ndarray, v: float) -> np.ndarray:
        time.sleep(self.delay)
        return self.inner.denoise(r, v)

    def analytic_divergence(self, r: np.ndarray, v: float) -> float:
        return self.inner.analytic_divergence(r, v)


def mc_divergence(
    denoiser: Callable[[np.ndarray, float], np.ndarray],
    r: np.ndarray,
    v: float,
    epsilon: Optional[float] = None,
    probes: int = 1,
    seed: int = 0,
) -> float:
    """
    Black-box divergence with Rademacher probes.

    (1/probes) sum_j <eta_j, g(r + eps eta_j, v) - g(r, v)> / (N eps).
    epsilon defaults to 1e-3 * sqrt(mean(r**2)).
    """
    if probes < 1:
        raise InvalidParameterError(f"probes must be >= 1, got {probes}")
    n = r.shape[0]
    if epsilon is None:
        power = float(np.mean(r ** 2))
        epsilon = 1e-3 * np.sqrt(power) if power > 0.0 else 1e-3
    if not epsilon > 0.0:
        raise InvalidParameterError(f"epsilon must be positive, got {epsilon}")

    rng = np.random.default_rng(seed)
    base = denoiser(r, v)
    if not np.all(np.isfinite(base)):
        raise NumericInputError("denoiser returned non-finite values")

    total = 0.0
    for _ in range(probes):
        eta = rng.choice(np.array([-1.0, 1.0]), size=n)
        jittered = denoiser(r + epsilon * eta, v)
        if not np.all(np.isfinite(jittered)):
            raise NumericInputError("denoiser returned non-finite values")
        total += float(np.dot(eta, jittered - base)) / (n * epsilon)
    return total / probes


@dataclass
class BlockBResult:
    x_ba: np.ndarray
    gamma_b: float
    mu_b: np.ndarray


def block_b_update(
    x_ab: np.ndarray, v_ab_tilde: float, denoiser: BaseDenoiser, seed: int = 0
) -> BlockBResult:
    """Denoise x_ab and apply the Onsager correction x_ba = (mu_B - gamma_B x_ab) / (1 - gamma_B)."""
    mu_b = denoiser(x_ab, v_ab_tilde)
    gamma_b = denoiser.divergence(x_ab, v_ab_tilde, seed=seed)
    if gamma_b >= 1.0 - ONSAGER_MARGIN:
        raise OnsagerDegenerateError(
            f"denoiser divergence {gamma_b:.6f} too close to 1 for the Onsager correction"
        )
    x_ba = (mu_b - gamma_b * x_ab) / (1.0 - gamma_b)
    return BlockBResult(x_ba=x_ba, gamma_b=gamma_b, mu_b=mu_b)


def create_denoiser(spec: DenoiserSpec) -> BaseDenoiser:
    """Create the denoiser described by a config block."""
    if spec.kind == "soft_threshold":
        denoiser: BaseDenoiser = SoftThresholdDenoiser(
            lambda_mult=spec.lambda_mult,
            divergence_mode=spec.divergence,
            probes=spec.probes,
            epsilon=spec.epsilon,
            threshold=spec.threshold,
        )
    else:
        raise InvalidParameterError(f"Unknown denoiser kind: {spec.kind}")

    if spec.delay > 0.0:
        logger.info(f"Denoiser calls cost an extra {spec.delay:.3f}s")
        denoiser = CostedDenoiser(denoiser, spec.delay)
    return denoiser
