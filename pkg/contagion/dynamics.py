"""
Integration of the lagged second-order bank-asset dynamics.

State variables are the holdings A_{iμ}, prices p_μ and equities E_i together
with the velocities ∂tA and ∂tp. Between impulses the equity moves with the
portfolio, ∂tE_i = Σ_μ A_{iμ}∂tp_μ, and

    τ_B ∂t²A_{iμ} = β (∂tE_i/E_i) A_{iμ} - ∂tA_{iμ}
    τ_A ∂t²p_μ    = α (∂tA_μ/A_μ) p_μ   - ∂tp_μ

A shock enters only as an impulse through apply_shock.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import IntegrationError, ValidationError
from .models import HoldingsMatrix, ModelParams, ShockSpec, SystemState, initial_state

logger = logging.getLogger(__name__)

_NAMES = ("A", "dA", "p", "dp", "E")

# largest relative equity change one RK stage may take before the step is split
STIFF_RATIO = 0.5
MAX_HALVINGS = 12


class Verdict(str, Enum):
    """How a run ended."""
    EQUILIBRIUM = "Equilibrium"
    CRASH = "Crash"
    BUBBLE = "Bubble"
    TIMEOUT = "Timeout"


@dataclass(frozen=True)
class IntegratorConfig:
    """
    Fixed-step integrator settings.

    Use IntegratorConfig.for_params to get the defaults tied to the response
    times: dt = min(τ_A, τ_B)/50 and t_max = 200·max(τ_A, τ_B).
    """
    dt: float = 0.02
    t_max: float = 200.0
    vel_tol: float = 1e-8
    hold_steps: int = 50
    p_floor: float = 1e-6
    p_cap: float = 1e3
    eps_e: float = 1e-9
    eps_a: float = 1e-12
    sample_stride: int = 1

    def __post_init__(self):
        for name in ("dt", "t_max", "vel_tol", "hold_steps", "p_floor", "p_cap",
                     "eps_e", "eps_a", "sample_stride"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"integrator setting {name} must be positive")

    @classmethod
    def for_params(cls, params: ModelParams, **overrides) -> "IntegratorConfig":
        tau_min = min(params.tau_a, params.tau_b)
        tau_max = max(params.tau_a, params.tau_b)
        settings = {"dt": tau_min / 50.0, "t_max": 200.0 * tau_max}
        settings.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**settings)

    def check(self, params: ModelParams):
        if not self.dt < min(params.tau_a, params.tau_b):
            raise ValidationError(f"dt={self.dt} must be smaller than both response times")

    def scaled(self, c: float) -> "IntegratorConfig":
        """Same run expressed in a time unit c times larger."""
        return replace(self, dt=self.dt * c, t_max=self.t_max * c)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))


@dataclass
class Trajectory:
    """Sampled states of one run and how it ended."""
    samples: List[SystemState]
    verdict: Verdict
    relaxation_time: float
    failed_banks: List[Tuple[str, float]]
    bank_ids: List[str] = field(default_factory=list)
    asset_ids: List[str] = field(default_factory=list)

    @property
    def final(self) -> SystemState:
        return self.samples[-1]

    def final_prices(self) -> np.ndarray:
        return np.array(self.final.p)

    def value_ratio(self) -> float:
        """Σ(A·p) at the end over Σ(A·p) at the first sample."""
        return self.final.holdings_value() / self.samples[0].holdings_value()


def apply_shock(state: SystemState, shock: ShockSpec, params: ModelParams,
                net: HoldingsMatrix) -> SystemState:
    """
    Apply an impulsive equity shock s to one bank.

    The equity jumps to (1+s)E_j and the bank's holdings velocity jumps by
    β A_{jμ} ln(1+s)/τ_B; prices and holdings stay continuous.
    """
    j = net.bank_index(shock.target_bank)
    if state.failed[j] or not state.e[j] > 0:
        raise ValidationError(f"bank {shock.target_bank} has already failed")
    if not shock.is_genuine:
        return state
    e = np.array(state.e)
    da = np.array(state.da)
    e[j] = (1.0 + shock.magnitude) * e[j]
    da[j] = da[j] + params.beta * state.a[j] * np.log1p(shock.magnitude) / params.tau_b
    return state.evolve(e=e, da=da)


def derivatives(a, da, p, dp, e, active, params: ModelParams, e_floor, a_guard):
    """Time derivatives of (A, ∂tA, p, ∂tp, E) in first-order form."""
    de = np.where(active, a @ dp, 0.0)
    pressure = params.beta * de / np.maximum(e, e_floor)
    dda = (pressure[:, None] * a - da) / params.tau_b
    dda[~active] = 0.0
    total = a.sum(axis=0)
    live = total > a_guard
    forcing = np.zeros_like(p)
    forcing[live] = params.alpha * da.sum(axis=0)[live] / total[live] * p[live]
    ddp = (forcing - dp) / params.tau_a
    return da, dda, dp, ddp, de


def _rk4(y, h, args):
    """
    One classical Runge-Kutta step on the tuple of state arrays.

    Besides the new state, returns the equities the stages saw (four stages
    plus the result, one row each) and the stage equity velocities.
    """
    k1 = derivatives(*y, *args)
    y2 = tuple(yi + 0.5 * h * ki for yi, ki in zip(y, k1))
    k2 = derivatives(*y2, *args)
    y3 = tuple(yi + 0.5 * h * ki for yi, ki in zip(y, k2))
    k3 = derivatives(*y3, *args)
    y4 = tuple(yi + h * ki for yi, ki in zip(y, k3))
    k4 = derivatives(*y4, *args)
    out = tuple(
        yi + (h / 6.0) * (a + 2.0 * b + 2.0 * c + d)
        for yi, a, b, c, d in zip(y, k1, k2, k3, k4)
    )
    stage_e = np.vstack([y[4], y2[4], y3[4], y4[4], out[4]])
    stage_de = np.vstack([k1[4], k2[4], k3[4], k4[4]])
    return out, stage_e, stage_de


def _equity_resolution(stage_e, stage_de, h, threshold) -> np.ndarray:
    """Per bank, the largest |∂tE|·h/E over the stages; inf where E touches the failure line."""
    clear = np.all(stage_e > threshold, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.max(np.abs(stage_de) * h / stage_e[:4], axis=0)
    return np.where(clear, ratio, np.inf)


def _retire(y, failed):
    """Zero equity and selling velocity of failed banks."""
    a, da, p, dp, e = (np.array(v) for v in y)
    da[failed] = 0.0
    e[failed] = 0.0
    return a, da, p, dp, e


def _substep(y, failed, t, h, depth, params: ModelParams, cfg: IntegratorConfig, e_ref, total_ref):
    """
    Advance the state from t by h.

    While a live bank's equity moves by more than STIFF_RATIO of itself
    within a stage, or reaches eps_e·E_i(0), the step is split in two, down
    to MAX_HALVINGS levels. A bank still touching the line at the finest
    level fails at the start of that piece, which is then redone without it.
    Returns the new state, the failed mask and the banks that failed here.
    """
    threshold = cfg.eps_e * e_ref
    a_guard = cfg.eps_a * total_ref
    newly = np.zeros_like(failed)
    while True:
        out, stage_e, stage_de = _rk4(y, h, (~failed, params, threshold, a_guard))
        ratio = _equity_resolution(stage_e, stage_de, h, threshold)
        unresolved = ~failed & (ratio > STIFF_RATIO)
        if not unresolved.any():
            break
        if depth < MAX_HALVINGS:
            half = 0.5 * h
            y, failed, first = _substep(y, failed, t, half, depth + 1, params, cfg, e_ref, total_ref)
            y, failed, second = _substep(y, failed, t + half, half, depth + 1, params, cfg,
                                         e_ref, total_ref)
            return y, failed, newly | first | second
        crossed = unresolved & np.isinf(ratio)
        if not crossed.any():
            break
        failed = failed | crossed
        newly = newly | crossed
        y = _retire(y, failed)

    for name, values in zip(_NAMES, out):
        if not np.all(np.isfinite(values)):
            raise IntegrationError(name, t + h)
    a, da, p, dp, e = _retire(out, failed)
    low = a < 0
    if low.any():
        a[low] = 0.0
        da[low & (da < 0)] = 0.0
    low = p < 0
    if low.any():
        p[low] = 0.0
        dp[low & (dp < 0)] = 0.0
    return (a, da, p, dp, e), failed, newly


def _advance(y, failed, t, params: ModelParams, cfg: IntegratorConfig, e_ref, total_ref):
    """One step of length dt with failure detection and non-negativity clamps."""
    y, failed, newly = _substep(y, np.array(failed), t, cfg.dt, 0, params, cfg, e_ref, total_ref)
    return y, failed, np.flatnonzero(newly), t + cfg.dt


def step(state: SystemState, params: ModelParams, cfg: IntegratorConfig) -> SystemState:
    """Advance a state by one time step dt."""
    y = (state.a, state.da, state.p, state.dp, state.e)
    y, failed, newly, t = _advance(y, np.array(state.failed), state.t, params, cfg,
                                   state.e_ref, state.total_ref)
    fail_times = dict(state.fail_times)
    fail_times.update({int(i): t for i in newly})
    a, da, p, dp, e = y
    return state.evolve(t=t, a=a, da=da, p=p, dp=dp, e=e, failed=failed, fail_times=fail_times)


def speed(da, dp, total_ref, params: ModelParams) -> float:
    """Largest dimensionless velocity: |∂tA|τ_B/A_μ(0) and |∂tp|τ_A."""
    v_a = float(np.max(np.abs(da) / total_ref)) * params.tau_b
    v_p = float(np.max(np.abs(dp))) * params.tau_a
    return max(v_a, v_p)


def run(net: HoldingsMatrix, params: ModelParams, shock: Optional[ShockSpec] = None,
        cfg: Optional[IntegratorConfig] = None, state: Optional[SystemState] = None) -> Trajectory:
    """
    Shock a network and integrate until equilibrium, crash, bubble or timeout.

    `state` lets a caller continue from an earlier final state, e.g. to
    compose sequential shocks; by default the run starts at initial_state(net).
    """
    if cfg is None:
        cfg = IntegratorConfig.for_params(params)
    cfg.check(params)
    state = initial_state(net) if state is None else state
    if shock is not None:
        state = apply_shock(state, shock, params, net)

    e_ref, total_ref = state.e_ref, state.total_ref
    y = tuple(np.array(v) for v in (state.a, state.da, state.p, state.dp, state.e))
    failed = np.array(state.failed)
    fail_times: Dict[int, float] = dict(state.fail_times)
    t = state.t

    def snapshot() -> SystemState:
        a, da, p, dp, e = y
        return SystemState(t, a, da, p, dp, e, failed, e_ref, total_ref, fail_times)

    samples = [snapshot()]
    verdict = Verdict.TIMEOUT
    relaxation_time = t + cfg.n_steps * cfg.dt
    quiet_steps, quiet_since = 0, t

    for k in range(cfg.n_steps + 1):
        p = y[2]
        if np.any(p < cfg.p_floor):
            verdict, relaxation_time = Verdict.CRASH, t
            break
        if np.any(p > cfg.p_cap):
            verdict, relaxation_time = Verdict.BUBBLE, t
            break
        if speed(y[1], y[3], total_ref, params) < cfg.vel_tol:
            if quiet_steps == 0:
                quiet_since = t
            quiet_steps += 1
            if quiet_steps >= cfg.hold_steps:
                verdict, relaxation_time = Verdict.EQUILIBRIUM, quiet_since
                break
        else:
            quiet_steps = 0
        if k == cfg.n_steps:
            break
        y, failed, newly, t = _advance(y, failed, t, params, cfg, e_ref, total_ref)
        for i in newly:
            fail_times[int(i)] = t
            logger.debug("bank %s failed at t=%.4g", net.banks[i].id, t)
        if (k + 1) % cfg.sample_stride == 0:
            samples.append(snapshot())

    if samples[-1].t != t:
        samples.append(snapshot())

    failed_banks = [
        (net.banks[i].id, fail_times[i])
        for i in sorted(fail_times, key=lambda i: (fail_times[i], i))
    ]
    return Trajectory(samples, verdict, relaxation_time, failed_banks, net.bank_ids, net.asset_ids)
