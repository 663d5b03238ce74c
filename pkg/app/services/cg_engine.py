"""
Conjugate Gradient inner solver for W_t mu = z_t.

Besides the plain CG recursion every step also advances:
- the scalar recursion (psi_bar, nu_bar, eta_bar) whose nu_bar estimates the
  Block A divergence, gamma_tilde = -nu_bar
- zeta = mu^T W mu, which turns the measurement-domain variance estimate
  v_ab_tilde into an O(M) update instead of an extra operator product

run_acg wraps the steps with the adaptive stopping rule; run_fixed_cg runs a
fixed number of steps (used with warm starts).
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple

import numpy as np

from app.models.schemas import AcgConfig, InnerTraceRecord
from app.services.operators import MeasurementOperator, apply_w
from app.utils.errors import (
    DivisionDegenerateError,
    InvalidShapeError,
    NumericalBreakdownError,
    UndefinedEstimateError,
)
from app.utils.numerics import ensure_finite

logger = logging.getLogger(__name__)

ApplyW = Callable[[np.ndarray], np.ndarray]

# ||r|| / ||z|| below this stops the iterations
ZERO_RESIDUAL = 1e-13
# Clamp floor for v_ab_tilde, relative to v_ba_tilde
V_AB_FLOOR = 1e-12


@dataclass
class CgState:
    """Inner-loop state: CG vectors plus the scalar recursions."""
    mu: np.ndarray
    r: np.ndarray
    p: np.ndarray
    n: int
    i: int = 0
    a_last: float = 0.0
    b_last: float = 0.0
    psi_bar: float = 0.0
    nu_bar: float = 0.0
    eta_bar: float = 0.0
    zeta: float = 0.0
    # Last applied direction and its eta_bar (warm-start carryover)
    p_last: Optional[np.ndarray] = None
    eta_last: float = 0.0
    converged: bool = False
    v_ab_history: List[float] = field(default_factory=list)
    # False where the matching v_ab_history entry is a clamp floor
    v_ab_valid: List[bool] = field(default_factory=list)
    flags: List[str] = field(default_factory=list)

    @property
    def residual_norm(self) -> float:
        return float(np.linalg.norm(self.r))


@dataclass
class WarmStart:
    """What one ACG/CG run hands to the next outer iteration."""
    mu: np.ndarray
    p: np.ndarray
    b: float
    psi_bar: float
    eta_bar: float


@dataclass
class AcgResult:
    """Output of one Block A inner solve."""
    mu: np.ndarray
    gamma_tilde: float
    v_ab_tilde: float
    iterations_used: int
    state: CgState
    trace: List[InnerTraceRecord]
    rel_residual: float

    def carryover(self) -> WarmStart:
        p = self.state.p_last if self.state.p_last is not None else np.zeros_like(self.mu)
        return WarmStart(
            mu=self.mu.copy(),
            p=p.copy(),
            b=self.state.b_last,
            psi_bar=self.state.psi_bar,
            eta_bar=self.state.eta_last,
        )


def _inner(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.dot(x, y))


def cg_cold_init(z: np.ndarray, delta: float, v_w_tilde: float, n: Optional[int] = None) -> CgState:
    """
    mu = 0, r = p = z with the scalar seeds nu_bar = psi_bar = 0, eta_bar = delta * v_w.

    ``n`` is the signal dimension used in the 1/N normalizations; it defaults
    to len(z) / delta.
    """
    z = ensure_finite(z, "z")
    if n is None:
        n = int(round(z.shape[0] / delta))
    return CgState(
        mu=np.zeros_like(z),
        r=z.copy(),
        p=z.copy(),
        n=n,
        eta_bar=delta * v_w_tilde,
        converged=not np.any(z),
    )


def estimate_gamma(state: CgState) -> float:
    """gamma_tilde = -nu_bar; zero (flagged) before the first step."""
    if state.i == 0:
        logger.warning("gamma requested before any CG iteration; returning 0")
        if "gamma_undefined" not in state.flags:
            state.flags.append("gamma_undefined")
        return 0.0
    return -state.nu_bar


def _v_ab_raw(state: CgState, gamma: float, v_ba_tilde: float, v_w_tilde: float) -> float:
    energy = state.zeta - v_w_tilde * _inner(state.mu, state.mu)
    return energy / (state.n * gamma ** 2 * v_ba_tilde) - v_ba_tilde


def estimate_v_ab(
    state: CgState,
    v_ba_tilde: float,
    v_w_tilde: float,
    floor: Optional[float] = None,
) -> float:
    """
    v_ab_tilde = (1/N) gamma^-2 (zeta - v_w ||mu||^2) / v_ba - v_ba.

    Non-positive values are clamped to ``floor`` (default 1e-12 * v_ba) and
    flagged with ``v_ab_clamped``. Before the first step gamma is zero, so the
    gamma = 0 check is skipped at i = 0 and the -v_ba value is clamped instead.
    """
    value, _ = _checked_v_ab(state, v_ba_tilde, v_w_tilde, floor)
    return value


def _checked_v_ab(
    state: CgState, v_ba_tilde: float, v_w_tilde: float, floor: Optional[float] = None
) -> Tuple[float, bool]:
    """The v_ab estimate and whether it is a genuine (unclamped) value."""
    if v_ba_tilde == 0.0:
        raise DivisionDegenerateError("v_ba_tilde = 0 in the v_ab estimator")
    if floor is None:
        floor = V_AB_FLOOR * v_ba_tilde

    if state.i == 0:
        value = -v_ba_tilde
    else:
        gamma = estimate_gamma(state)
        if gamma == 0.0:
            raise UndefinedEstimateError("gamma_tilde = 0, v_ab estimate undefined")
        value = _v_ab_raw(state, gamma, v_ba_tilde, v_w_tilde)

    if not value > 0.0:
        _add_flag(state, "v_ab_clamped")
        logger.debug(f"v_ab estimate {value:.3e} clamped at i={state.i}")
        return floor, False
    return value, True


def _add_flag(state: CgState, flag: str) -> None:
    if flag not in state.flags:
        state.flags.append(flag)


def cg_step(
    state: CgState,
    apply_w: ApplyW,
    z: np.ndarray,
    v_ba_tilde: float,
    v_w_tilde: float,
    delta: float,
) -> CgState:
    """
    One CG iteration plus the gamma and variance recursions.

    The returned state is new; vectors of the input state are not modified.
    """
    if v_ba_tilde == 0.0:
        raise DivisionDegenerateError("v_ba_tilde = 0 in the nu_bar update")

    r_norm2 = _inner(state.r, state.r)
    if r_norm2 == 0.0:
        return state

    p_old = state.p
    d = apply_w(p_old)
    curvature = _inner(p_old, d)
    if not curvature > 0.0:
        raise NumericalBreakdownError(
            f"<p, W p> = {curvature:.3e} at i={state.i}; W is not positive definite"
        )

    a = r_norm2 / curvature
    # <mu, W p> vanishes under exact conjugacy and after a cold start
    mu_cross = _inner(state.mu, d)
    mu = state.mu + a * p_old
    r = state.r - a * d
    b = _inner(r, r) / r_norm2
    p = r + b * p_old

    n = state.n
    psi_bar = state.psi_bar + a * state.eta_bar
    nu_bar = (_inner(z, mu) / n - psi_bar) / v_ba_tilde
    eta_bar = v_w_tilde * (delta - psi_bar - v_ba_tilde * nu_bar) + b * state.eta_bar
    zeta = state.zeta + a * a * curvature + 2.0 * a * mu_cross

    z_norm = float(np.linalg.norm(z))
    converged = z_norm == 0.0 or float(np.linalg.norm(r)) / z_norm < ZERO_RESIDUAL

    new_state = replace(
        state,
        mu=mu,
        r=r,
        p=p,
        i=state.i + 1,
        a_last=a,
        b_last=b,
        psi_bar=psi_bar,
        nu_bar=nu_bar,
        eta_bar=eta_bar,
        zeta=zeta,
        p_last=p_old,
        eta_last=state.eta_bar,
        converged=converged,
        v_ab_history=list(state.v_ab_history),
        v_ab_valid=list(state.v_ab_valid),
        flags=list(state.flags),
    )
    value, valid = _checked_v_ab(new_state, v_ba_tilde, v_w_tilde)
    new_state.v_ab_history.append(value)
    new_state.v_ab_valid.append(valid)
    return new_state


def warm_start_init(
    z_t: np.ndarray,
    prev_mu: np.ndarray,
    prev_p: np.ndarray,
    prev_b: float,
    apply_w_t: ApplyW,
    delta: float,
    v_w_tilde: float,
    v_ba_tilde: float,
    prev_psi_bar: float = 0.0,
    prev_eta_bar: float = 0.0,
    n: Optional[int] = None,
) -> CgState:
    """
    mu = prev_mu, r = z_t - W_t prev_mu, p = r + prev_b * prev_p.

    The scalar recursion is re-seeded: psi_bar carries over, nu_bar is
    recomputed once from <z_t, mu>, eta_bar follows the cold-start recursion
    with the carried eta_bar of prev_p, and zeta = <mu, W_t mu>.
    """
    z_t = ensure_finite(z_t, "z_t")
    prev_mu = ensure_finite(prev_mu, "prev_mu")
    prev_p = ensure_finite(prev_p, "prev_p")
    if prev_mu.shape != z_t.shape or prev_p.shape != z_t.shape:
        raise InvalidShapeError(
            f"warm-start vectors {prev_mu.shape}/{prev_p.shape} do not match z {z_t.shape}"
        )
    if not np.isfinite(prev_b):
        raise InvalidShapeError(f"prev_b must be finite, got {prev_b}")
    if n is None:
        n = int(round(z_t.shape[0] / delta))

    if not np.any(prev_mu):
        state = cg_cold_init(z_t, delta, v_w_tilde, n=n)
        state.p = z_t + prev_b * prev_p
        state.eta_bar += prev_b * prev_eta_bar
        return state

    w_mu = apply_w_t(prev_mu)
    r = z_t - w_mu
    p = r + prev_b * prev_p

    psi_bar = prev_psi_bar
    nu_bar = (_inner(z_t, prev_mu) / n - psi_bar) / v_ba_tilde if v_ba_tilde > 0.0 else 0.0
    eta_bar = v_w_tilde * (delta - psi_bar - v_ba_tilde * nu_bar) + prev_b * prev_eta_bar
    logger.warning(
        f"Warm start re-seeds the scalar recursion: psi_bar={psi_bar:.4e} "
        f"nu_bar={nu_bar:.4e} eta_bar={eta_bar:.4e}"
    )

    z_norm = float(np.linalg.norm(z_t))
    return CgState(
        mu=prev_mu.copy(),
        r=r,
        p=p,
        n=n,
        psi_bar=psi_bar,
        nu_bar=nu_bar,
        eta_bar=eta_bar,
        zeta=_inner(prev_mu, w_mu),
        converged=z_norm == 0.0 or float(np.linalg.norm(r)) / z_norm < ZERO_RESIDUAL,
        flags=["warm_reseeded"],
    )


def _trace_row(t: int, state: CgState, z_norm: float) -> InnerTraceRecord:
    return InnerTraceRecord(
        t=t,
        i=state.i,
        a=state.a_last,
        b=state.b_last,
        psi_bar=state.psi_bar,
        nu_bar=state.nu_bar,
        eta_bar=state.eta_bar,
        zeta=state.zeta,
        v_ab_tilde=state.v_ab_history[-1] if state.v_ab_history else float("inf"),
        rel_residual=state.residual_norm / z_norm if z_norm > 0 else 0.0,
        flags=list(state.flags),
    )


def _initial_state(
    z_t: np.ndarray,
    apply: ApplyW,
    delta: float,
    v_w_tilde: float,
    v_ba_tilde: float,
    n: int,
    warm: Optional[WarmStart],
) -> CgState:
    if warm is None:
        return cg_cold_init(z_t, delta, v_w_tilde, n=n)
    return warm_start_init(
        z_t,
        warm.mu,
        warm.p,
        warm.b,
        apply,
        delta=delta,
        v_w_tilde=v_w_tilde,
        v_ba_tilde=v_ba_tilde,
        prev_psi_bar=warm.psi_bar,
        prev_eta_bar=warm.eta_bar,
        n=n,
    )


def _last_valid_v_ab(state: CgState) -> Optional[float]:
    for value, valid in zip(reversed(state.v_ab_history), reversed(state.v_ab_valid)):
        if valid:
            return value
    return None


def _finish(state: CgState, trace: List[InnerTraceRecord], z_norm: float) -> AcgResult:
    if state.i == 0:
        raise UndefinedEstimateError("zero residual before the first CG iteration")
    if state.converged:
        _add_flag(state, "zero_residual")

    v_ab_tilde = state.v_ab_history[-1]
    if not state.v_ab_valid[-1]:
        # A clamp floor never leaves Block A
        fallback = _last_valid_v_ab(state)
        if fallback is None:
            raise UndefinedEstimateError(
                f"no positive v_ab estimate in {state.i} CG iterations"
            )
        logger.warning(
            f"v_ab estimate non-positive at i={state.i}; using the last positive value {fallback:.4e}"
        )
        _add_flag(state, "v_ab_fallback")
        v_ab_tilde = fallback

    return AcgResult(
        mu=state.mu,
        gamma_tilde=estimate_gamma(state),
        v_ab_tilde=v_ab_tilde,
        iterations_used=state.i,
        state=state,
        trace=trace,
        rel_residual=state.residual_norm / z_norm if z_norm > 0 else 0.0,
    )


def _improvement(previous: float, current: float) -> float:
    """Relative drop (v(i) - v(i+1)) / v(i+1)."""
    if np.isinf(previous):
        return float("inf")
    return (previous - current) / current


def run_acg(
    z_t: np.ndarray,
    operator: MeasurementOperator,
    v_w_tilde: float,
    v_ba_tilde: float,
    delta: float,
    config: AcgConfig,
    prev_v_ab: float,
    warm: Optional[WarmStart] = None,
    t: int = 0,
) -> AcgResult:
    """
    Adaptive CG.

    Iterates while i < i_max and (relative improvement >= delta_threshold or
    v_ab(i) >= c * prev_v_ab). Use prev_v_ab = inf at t = 0; an infinite
    delta_threshold switches the improvement criterion off.

    A step whose v_ab estimate turns non-positive is discarded and the run
    stops at the previous step. Clamped values never meet the stopping rule.
    """
    if not prev_v_ab > 0.0:
        raise DivisionDegenerateError(f"prev_v_ab must be positive, got {prev_v_ab}")

    def apply(u: np.ndarray) -> np.ndarray:
        return apply_w(operator, v_w_tilde, v_ba_tilde, u)

    state = _initial_state(z_t, apply, delta, v_w_tilde, v_ba_tilde, operator.n, warm)
    z_norm = float(np.linalg.norm(z_t))
    trace: List[InnerTraceRecord] = []
    improvement_off = np.isinf(config.delta_threshold)
    v_prev = float("inf")

    while state.i < config.i_max and not state.converged:
        previous = state
        state = cg_step(state, apply, z_t, v_ba_tilde, v_w_tilde, delta)
        if state is previous:
            break

        if not state.v_ab_valid[-1]:
            if previous.v_ab_valid and previous.v_ab_valid[-1]:
                # Recursion drift: keep the last step with a usable estimate
                logger.warning(
                    f"t={t}: v_ab estimate non-positive at i={state.i}; "
                    f"stopping at i={previous.i}"
                )
                state = previous
                _add_flag(state, "v_ab_rollback")
                break
            trace.append(_trace_row(t, state, z_norm))
            continue

        trace.append(_trace_row(t, state, z_norm))
        v_now = state.v_ab_history[-1]
        improvement = _improvement(v_prev, v_now)
        v_prev = v_now
        logger.debug(
            f"t={t} i={state.i} a={state.a_last:.4e} nu_bar={state.nu_bar:.4e} "
            f"v_ab={v_now:.4e} improvement={improvement:.4e}"
        )

        small_gain = improvement_off or improvement < config.delta_threshold
        reached_target = v_now < config.c * prev_v_ab
        if small_gain and reached_target:
            break

    return _finish(state, trace, z_norm)


def run_fixed_cg(
    z_t: np.ndarray,
    operator: MeasurementOperator,
    v_w_tilde: float,
    v_ba_tilde: float,
    delta: float,
    iterations: int,
    warm: Optional[WarmStart] = None,
    t: int = 0,
) -> AcgResult:
    """Exactly ``iterations`` CG steps (fewer only on a zero residual)."""

    def apply(u: np.ndarray) -> np.ndarray:
        return apply_w(operator, v_w_tilde, v_ba_tilde, u)

    state = _initial_state(z_t, apply, delta, v_w_tilde, v_ba_tilde, operator.n, warm)
    z_norm = float(np.linalg.norm(z_t))
    trace: List[InnerTraceRecord] = []

    for _ in range(iterations):
        if state.converged:
            break
        state = cg_step(state, apply, z_t, v_ba_tilde, v_w_tilde, delta)
        trace.append(_trace_row(t, state, z_norm))

    return _finish(state, trace, z_norm)


def cg_directions(
    z: np.ndarray, apply: ApplyW, iterations: int, delta: float, v_w_tilde: float, v_ba_tilde: float
) -> Tuple[List[np.ndarray], CgState]:
    """Cold-start CG returning every search direction p^0 .. p^{k-1} (diagnostics)."""
    state = cg_cold_init(z, delta, v_w_tilde)
    directions = []
    for _ in range(iterations):
        if state.converged:
            break
        directions.append(state.p.copy())
        state = cg_step(state, apply, z, v_ba_tilde, v_w_tilde, delta)
    return directions, state
