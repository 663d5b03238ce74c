"""
Ground-truth reference computations, available only in simulation.

Provides:
- SystemInstance / make_instance: y = A x + w with a Bernoulli-Gaussian x
- oracle_gamma: the divergence of Block A measured against the true error q
- exact_lmmse: direct Cholesky solve of W mu = z for small dense operators
- true variances, error-vector correlation and Gaussianity audits

Nothing here feeds back into the solver except in the oracle variants.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import linalg, stats

from app.services.operators import MeasurementOperator
from app.utils.errors import DivisionDegenerateError, InvalidParameterError, InvalidShapeError, SolverError
from app.utils.numerics import ensure_finite, spawn_generators

logger = logging.getLogger(__name__)

# Largest measurement dimension the direct solve accepts
EXACT_LMMSE_MAX_M = 512


@dataclass(frozen=True)
class SystemInstance:
    """One noisy linear measurement of a known signal."""
    x: np.ndarray
    operator: MeasurementOperator
    w: np.ndarray
    y: np.ndarray
    v_w: float
    seeds: Dict[str, int] = field(default_factory=dict)

    @property
    def delta(self) -> float:
        return self.operator.m / self.operator.n

    @property
    def n(self) -> int:
        return self.operator.n


def bernoulli_gaussian(rng: np.random.Generator, n: int, sparsity: float) -> np.ndarray:
    """x_k = b_k g_k with b_k ~ Bernoulli(sparsity), g_k ~ N(0, 1); never all-zero."""
    support = rng.random(n) < sparsity
    x = np.where(support, rng.standard_normal(n), 0.0)
    if not np.any(x):
        x[int(rng.integers(n))] = 1.0
    return x


def make_instance(
    operator: MeasurementOperator,
    sparsity: float,
    snr_db: float,
    seed: int,
    v_w_override: Optional[float] = None,
) -> SystemInstance:
    """
    Draw x and w for ``operator``.

    The noise variance is set from the SNR, v_w = ||A x||^2 / (M 10^(snr/10)).
    ``v_w_override`` replaces the drawn noise level (the solver is then told
    the override too).
    """
    if not np.isfinite(snr_db):
        raise InvalidParameterError(f"snr_db must be finite, got {snr_db}")
    streams = spawn_generators(seed, ["signal", "noise", "probe"])

    x = bernoulli_gaussian(streams["signal"], operator.n, sparsity)
    ax = operator.forward(x)
    v_w = float(np.dot(ax, ax) / (operator.m * 10.0 ** (snr_db / 10.0)))
    if v_w_override is not None:
        v_w = float(v_w_override)
    w = np.sqrt(v_w) * streams["noise"].standard_normal(operator.m)
    y = ax + w

    seeds = {
        "instance": seed,
        "operator": operator.seed,
        "probe": int(streams["probe"].integers(0, 2**31 - 1)),
    }
    logger.info(
        f"Instance n={operator.n} m={operator.m} snr={snr_db:g}dB v_w={v_w:.3e} "
        f"nnz={np.count_nonzero(x)} seed={seed}"
    )
    return SystemInstance(x=x, operator=operator, w=w, y=y, v_w=v_w, seeds=seeds)


# ===========================================
# Oracle estimators
# ===========================================

def oracle_gamma(q: np.ndarray, operator: MeasurementOperator, mu: np.ndarray, v_ba_true: float) -> float:
    """-(1 / (N v_ba)) <q, A^T mu>; same scale and sign as nu_bar."""
    if v_ba_true == 0.0:
        raise DivisionDegenerateError("true v_ba is zero in the oracle gamma")
    return -float(np.dot(q, operator.adjoint(mu))) / (operator.n * v_ba_true)


def _w_matrix(operator: MeasurementOperator, v_w: float, v_ba: float) -> np.ndarray:
    if operator.m > EXACT_LMMSE_MAX_M:
        raise InvalidShapeError(
            f"exact LMMSE needs m <= {EXACT_LMMSE_MAX_M}, got m={operator.m}"
        )
    a = operator.matrix()
    return v_w * np.eye(operator.m) + v_ba * (a @ a.T)


def exact_lmmse(z: np.ndarray, operator: MeasurementOperator, v_w: float, v_ba: float) -> np.ndarray:
    """Direct solve of (v_w I + v_ba A A^T) mu = z."""
    z = ensure_finite(z, "z")
    w = _w_matrix(operator, v_w, v_ba)
    if np.linalg.cond(w) * np.finfo(float).eps >= 1.0:
        raise SolverError("W is singular to machine precision")
    try:
        factor = linalg.cho_factor(w, lower=True)
    except linalg.LinAlgError as exc:
        raise SolverError(f"Cholesky factorization failed: {exc}") from exc
    return linalg.cho_solve(factor, z)


def exact_lmmse_divergence(operator: MeasurementOperator, v_w: float, v_ba: float) -> float:
    """(1/N) Tr{A^T W^-1 A} from the singular values; the limit of nu_bar."""
    s2 = operator.spectrum ** 2
    return float(np.sum(s2 / (v_w + v_ba * s2)) / operator.n)


def exact_lmmse_v_ab(operator: MeasurementOperator, v_w: float, v_ba: float) -> float:
    """Extrinsic Block A variance of exact VAMP: 1 / divergence - v_ba."""
    return 1.0 / exact_lmmse_divergence(operator, v_w, v_ba) - v_ba


def true_v_ab(x_ab: np.ndarray, x: np.ndarray) -> float:
    return float(np.mean((x_ab - x) ** 2))


def true_v_ba(x_ba: np.ndarray, x: np.ndarray) -> float:
    return float(np.mean((x_ba - x) ** 2))


# ===========================================
# Audits
# ===========================================

def correlation_audit(h: np.ndarray, q_history: Sequence[np.ndarray]) -> List[float]:
    """
    <h, q_tau> / (N sqrt(v_ab v_ba^tau)) for every tau.

    Variances are the empirical ones of the vectors themselves; a zero vector
    gives a zero entry.
    """
    n = h.shape[0]
    v_ab = float(np.dot(h, h)) / n
    values = []
    for q in q_history:
        v_ba = float(np.dot(q, q)) / n
        scale = n * np.sqrt(v_ab * v_ba)
        values.append(float(np.dot(h, q)) / scale if scale > 0.0 else 0.0)
    return values


def excess_kurtosis(h: np.ndarray) -> float:
    """Fisher excess kurtosis of the entries (0 for a Gaussian)."""
    return float(stats.kurtosis(h, fisher=True, bias=False))


def audit_threshold(fixed: float, n: int) -> float:
    """Finite-N tolerance max(fixed, 3 / sqrt(N))."""
    return max(fixed, 3.0 / np.sqrt(n))
