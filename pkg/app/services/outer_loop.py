"""
Outer VAMP loop: Block A (CG solve plus correction) alternating with Block B
(denoiser plus Onsager correction).

Variants:
- cgvamp:        cold-start CG every outer iteration, adaptive or fixed length
- cgvamp_oracle: cold-start CG, correction scalar measured against the true error
- ws_practical:  warm-started CG with the single-term correction
- ws_oracle:     warm-started CG with the multi-term correction over all past errors

The oracle variants need the ground-truth signal; they are simulation tools.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np
from scipy import linalg

from app.models.schemas import RunConfig, RunResult, TraceRecord
from app.services.cg_engine import V_AB_FLOOR, AcgResult, WarmStart, run_acg, run_fixed_cg
from app.services.denoising import BaseDenoiser, block_b_update, create_denoiser
from app.services.operators import MeasurementOperator
from app.services.oracle import (
    SystemInstance,
    correlation_audit,
    excess_kurtosis,
    oracle_gamma,
    true_v_ab,
    true_v_ba,
)
from app.utils.errors import BlockADegenerateError, CgVampError, InvalidParameterError
from app.utils.numerics import ensure_finite, to_db

logger = logging.getLogger(__name__)

# Clamp value for a negative v_ba estimate
V_BA_FLOOR = 1e-10
# Relative ridge added to a singular error Gram matrix
GRAM_RIDGE = 1e-12
# Fixed-point passes of the spectral v_ba estimator
SPECTRAL_REFINEMENTS = 2


@dataclass
class OuterState:
    """State carried between outer iterations."""
    t: int
    x_ba: np.ndarray
    v_ba_tilde: float
    z: Optional[np.ndarray] = None
    x_ab: Optional[np.ndarray] = None
    v_ab_tilde: float = float("inf")
    carry: Optional[WarmStart] = None
    # Past x_ba vectors, oracle variants only
    history: List[np.ndarray] = field(default_factory=list)
    flags: List[str] = field(default_factory=list)


def estimate_v_ba(
    z_t: np.ndarray,
    v_w_tilde: float,
    delta: float,
    n: Optional[int] = None,
    normalization: float = 1.0,
    floor: float = V_BA_FLOOR,
    flags: Optional[List[str]] = None,
) -> float:
    """
    v_ba_tilde = (||z||^2 / N - delta v_w) / ((1/N) Tr{A A^T}).

    Negative values are clamped to ``floor`` and flagged ``v_ba_clamped``.
    """
    z_t = ensure_finite(z_t, "z_t")
    if n is None:
        n = int(round(z_t.shape[0] / delta))
    value = (float(np.dot(z_t, z_t)) / n - delta * v_w_tilde) / normalization
    if value < 0.0:
        logger.warning(f"v_ba estimate {value:.3e} negative; clamped to {floor:.1e}")
        if flags is not None and "v_ba_clamped" not in flags:
            flags.append("v_ba_clamped")
        return floor
    return value


def estimate_v_ba_spectral(
    z_t: np.ndarray,
    operator: MeasurementOperator,
    v_w_tilde: float,
    floor: float = V_BA_FLOOR,
    flags: Optional[List[str]] = None,
    refinements: int = SPECTRAL_REFINEMENTS,
) -> float:
    """
    Weighted version of the trace estimator in the singular basis of A A^T.

    With c = U^T z each coordinate has E[c_k^2] = v s_k^2 + v_w, and
    v = sum w_k (c_k^2 - v_w) / sum w_k s_k^2 with w_k = s_k^2 / (v s_k^2 + v_w)^2.
    The weights need v, so the trace estimate seeds a short fixed-point
    refinement. On a flat spectrum every weight is equal and the result is the
    trace estimate.
    """
    value = estimate_v_ba(
        z_t, v_w_tilde, operator.delta, n=operator.n,
        normalization=operator.normalization, floor=floor, flags=flags,
    )
    if not value > floor:
        return value

    coords = operator.left_coordinates(z_t)
    s2 = operator.spectrum ** 2
    excess = coords * coords - v_w_tilde
    for _ in range(refinements):
        weights = s2 / (value * s2 + v_w_tilde) ** 2
        value = float(np.dot(weights, excess) / np.dot(weights, s2))
        if not value > 0.0:
            logger.warning(f"spectral v_ba estimate {value:.3e} non-positive; clamped to {floor:.1e}")
            if flags is not None and "v_ba_clamped" not in flags:
                flags.append("v_ba_clamped")
            return floor
    return value


def measure_v_ba(
    z_t: np.ndarray,
    operator: MeasurementOperator,
    v_w_tilde: float,
    estimator: str = "spectral",
    floor: float = V_BA_FLOOR,
    flags: Optional[List[str]] = None,
) -> float:
    """v_ba_tilde from the residual with the configured estimator."""
    if estimator == "spectral":
        return estimate_v_ba_spectral(z_t, operator, v_w_tilde, floor=floor, flags=flags)
    elif estimator == "trace":
        return estimate_v_ba(
            z_t, v_w_tilde, operator.delta, n=operator.n,
            normalization=operator.normalization, floor=floor, flags=flags,
        )
    else:
        raise InvalidParameterError(f"Unknown v_ba estimator: {estimator}")


def ws_oracle_update_x_ab(
    x_ba_history: List[np.ndarray],
    at_mu: np.ndarray,
    x: np.ndarray,
    flags: Optional[List[str]] = None,
) -> np.ndarray:
    """
    Multi-term corrected Block A output.

    With Q = [x_ba^0 - x, ..., x_ba^t - x] the weights solve
    Q^T Q gamma = -Q^T A^T mu, and x_ab = (sum_tau gamma_tau x_ba^tau + A^T mu) / sum gamma.
    The resulting error x_ab - x is orthogonal to every column of Q.
    """
    if not x_ba_history:
        raise InvalidParameterError("x_ba history is empty")
    flags = flags if flags is not None else []

    q = np.column_stack([x_ba - x for x_ba in x_ba_history])
    gram = q.T @ q
    rhs = -(q.T @ at_mu)
    scale = float(np.trace(gram))
    if scale == 0.0:
        raise BlockADegenerateError("every past error vector is zero")

    try:
        if np.linalg.cond(gram) * np.finfo(float).eps < 1.0:
            gammas = linalg.solve(gram, rhs, assume_a="pos")
        else:
            logger.warning(f"error Gram matrix of size {gram.shape[0]} is singular; adding a ridge")
            if "gram_regularized" not in flags:
                flags.append("gram_regularized")
            gammas = linalg.solve(gram + GRAM_RIDGE * scale * np.eye(gram.shape[0]), rhs, assume_a="pos")
    except (linalg.LinAlgError, ValueError) as e:
        raise BlockADegenerateError(f"correction weight solve failed: {e}") from e

    total = float(np.sum(gammas))
    if abs(total) <= np.finfo(float).tiny:
        logger.warning("correction weights sum to zero; keeping the latest x_ba")
        if "sum_gamma_zero" not in flags:
            flags.append("sum_gamma_zero")
        return x_ba_history[-1].copy()

    weighted = np.column_stack(x_ba_history) @ gammas
    return (weighted + at_mu) / total


def block_a(
    state: OuterState,
    y: np.ndarray,
    operator: MeasurementOperator,
    v_w_tilde: float,
    config: RunConfig,
    x_true: Optional[np.ndarray] = None,
) -> Tuple[OuterState, AcgResult]:
    """
    Solve W_t mu = z_t with CG and form x_ab.

    Cold or warm start follows the variant; ACG or a fixed number of steps
    follows the config. Oracle variants use the multi-term correction and the
    true error variance of x_ab.
    """
    variant = config.variant
    z_t = state.z if state.z is not None else y - operator.forward(state.x_ba)
    warm = state.carry if variant.warm else None

    if config.fixed_iterations is not None:
        result = run_fixed_cg(
            z_t, operator, v_w_tilde, state.v_ba_tilde, operator.delta,
            config.fixed_iterations, warm=warm, t=state.t,
        )
    else:
        result = run_acg(
            z_t, operator, v_w_tilde, state.v_ba_tilde, operator.delta,
            config.acg, prev_v_ab=state.v_ab_tilde, warm=warm, t=state.t,
        )

    gamma = result.gamma_tilde
    if gamma == 0.0:
        raise BlockADegenerateError(f"gamma_tilde = 0 at t={state.t}")

    flags = list(state.flags)
    for flag in result.state.flags:
        if flag not in flags:
            flags.append(flag)
    at_mu = operator.adjoint(result.mu)

    history: List[np.ndarray] = []
    if variant.oracle:
        if x_true is None:
            raise InvalidParameterError(f"variant {variant.value} needs the true signal")
        history = state.history + [state.x_ba] if variant.warm else [state.x_ba]
        x_ab = ws_oracle_update_x_ab(history, at_mu, x_true, flags)
        v_ab_tilde = max(true_v_ab(x_ab, x_true), V_AB_FLOOR * state.v_ba_tilde)
    else:
        x_ab = state.x_ba - at_mu / gamma
        v_ab_tilde = result.v_ab_tilde

    new_state = replace(
        state,
        z=z_t,
        x_ab=x_ab,
        v_ab_tilde=v_ab_tilde,
        carry=result.carryover() if variant.warm else None,
        history=history,
        flags=flags,
    )
    return new_state, result


def _oracle_columns(
    instance: SystemInstance, x_ba: np.ndarray, x_ab: np.ndarray, mu: np.ndarray
) -> dict:
    x = instance.x
    q = x_ba - x
    h = x_ab - x
    v_ba = true_v_ba(x_ba, x)
    return {
        "oracle_v_ab": true_v_ab(x_ab, x),
        "oracle_v_ba": v_ba,
        "oracle_gamma": oracle_gamma(q, instance.operator, mu, v_ba) if v_ba > 0.0 else None,
        "oracle_corr": correlation_audit(h, [q])[0],
        "oracle_kurtosis": excess_kurtosis(h),
    }


def run(
    config: RunConfig,
    instance: SystemInstance,
    denoiser: Optional[BaseDenoiser] = None,
    v_ba_floor: float = V_BA_FLOOR,
) -> RunResult:
    """
    Outer loop until t_max iterations or v_ba_tilde < epsilon.

    Any solver error stops the run; the rows produced so far are kept and the
    error is recorded on the result.
    """
    operator = instance.operator
    x = instance.x
    v_w = config.v_w_override if config.v_w_override is not None else instance.v_w
    denoiser = denoiser or create_denoiser(config.denoiser)
    probe_seed = instance.seeds.get("probe", 0)
    x_norm2 = float(np.dot(x, x))
    variant = config.variant

    result = RunResult(config_hash=config.config_hash(), seeds=dict(instance.seeds))
    logger.info(
        f"Run {result.config_hash}: variant={variant.value} policy={config.policy_label} "
        f"n={operator.n} m={operator.m} t_max={config.t_max}"
    )

    flags: List[str] = []
    z0 = instance.y.copy()
    state = OuterState(
        t=0,
        x_ba=np.zeros(operator.n),
        v_ba_tilde=measure_v_ba(
            z0, operator, v_w, config.v_ba_estimator, floor=v_ba_floor, flags=flags,
        ),
        z=z0,
        flags=flags,
    )
    started = time.perf_counter()

    try:
        while state.t < config.t_max and state.v_ba_tilde >= config.epsilon:
            t = state.t
            x_ba = state.x_ba
            v_ba_tilde = state.v_ba_tilde

            tick = time.perf_counter()
            state, acg = block_a(
                state, instance.y, operator, v_w, config, x_true=x if variant.oracle else None
            )
            time_a = time.perf_counter() - tick

            tick = time.perf_counter()
            out_b = block_b_update(state.x_ab, state.v_ab_tilde, denoiser, seed=probe_seed + t)
            time_b = time.perf_counter() - tick

            nmse = float(np.sum((out_b.mu_b - x) ** 2)) / x_norm2
            nu_bar = -acg.gamma_tilde
            row = TraceRecord(
                t=t,
                variant=variant.value,
                inner_iterations=acg.iterations_used,
                nmse=nmse,
                nmse_db=to_db(nmse),
                v_ba_tilde=v_ba_tilde,
                v_ab_tilde=state.v_ab_tilde,
                gamma_tilde=acg.gamma_tilde,
                gamma_b=out_b.gamma_b,
                v_ab_se=1.0 / nu_bar - v_ba_tilde,
                v_ba_se=out_b.gamma_b * state.v_ab_tilde / (1.0 - out_b.gamma_b),
                rel_residual=acg.rel_residual,
                time_block_a=time_a,
                time_block_b=time_b,
                elapsed=time.perf_counter() - started,
                flags=list(state.flags),
            )
            if config.oracle:
                row = row.model_copy(update=_oracle_columns(instance, x_ba, state.x_ab, acg.mu))
            result.rows.append(row)
            result.inner_rows.extend(acg.trace)

            logger.info(
                f"t={t} inner={acg.iterations_used} nmse={row.nmse_db:.2f}dB "
                f"v_ab={state.v_ab_tilde:.3e} v_ba={v_ba_tilde:.3e}"
            )

            next_flags: List[str] = []
            z_next = instance.y - operator.forward(out_b.x_ba)
            state = replace(
                state,
                t=t + 1,
                x_ba=out_b.x_ba,
                z=z_next,
                v_ba_tilde=measure_v_ba(
                    z_next, operator, v_w, config.v_ba_estimator, floor=v_ba_floor, flags=next_flags,
                ),
                flags=next_flags,
            )
    except CgVampError as e:
        logger.error(f"Run {result.config_hash} stopped at t={state.t}: {e}", exc_info=True)
        result.error = f"{type(e).__name__}: {e}"

    logger.info(
        f"Run {result.config_hash} finished: {len(result.rows)} outer iterations, "
        f"final nmse={result.final_nmse_db}"
    )
    return result
