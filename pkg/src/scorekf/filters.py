"""Filter bank: Kalman, score-corrected (GF), centered GF, trivial and batch filters.

The score-corrected filters share one deterministic gain schedule,

    P_t = R (gamma^2 P_{t-1} + Q) / (I^2 (gamma^2 P_{t-1} + Q) + R),
    K_t = P_t I / R,          R = s_N^2 I(v),  Q = 1/N.

With ``I = 1`` this is the ordinary Kalman Riccati recursion with R = s_N^2,
which is what the KF baseline uses regardless of the true noise law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from . import _kernels
from .state_space import SystemParams, Trajectory, stationary_var_x


class Mode(str, Enum):
    KF = "kf"
    GF = "gf"
    CGF = "cgf"
    TRIVIAL_MEAN = "trivial_mean"
    TRIVIAL_OBS = "trivial_obs"
    NAIVE_BATCH = "naive_batch"


class GainMode(str, Enum):
    RECURSIVE = "recursive"
    STATIONARY = "stationary"


@dataclass(frozen=True)
class GainSchedule:
    Q: float
    R: float
    info: float
    P: np.ndarray
    K: np.ndarray
    P_inf: float
    K_inf: float

    @property
    def J_inf(self) -> float:
        return 1.0 / self.P_inf


@dataclass(frozen=True)
class FilterState:
    estimate: float = 0.0
    step: int = 0
    mode: Mode = Mode.KF


def stationary_information(gamma: float, Q: float, R: float, info: float) -> float:
    """Positive root of J^2 - ((1 - gamma^2)/Q + I^2/R) J - gamma^2 I^2 / (R Q) = 0.

    This is the fixed point of J_t = I^2/R + J_{t-1} / (gamma^2 + Q J_{t-1}),
    i.e. the reciprocal of the stationary P of the gain recursion.
    """
    a = info * info / R
    b = (1.0 - gamma) * (1.0 + gamma) / Q + a
    c = gamma * gamma * a / Q
    return 0.5 * (b + math.sqrt(b * b + 4.0 * c))


def gain_schedule(
    params: SystemParams, horizon: int, P0: float | None = None, info: float | None = None
) -> GainSchedule:
    """Gain trajectory P_t, K_t for t = 1..horizon plus its stationary point.

    ``info`` defaults to the observation-noise Fisher information (the GF
    schedule); pass ``info=1.0`` for the Kalman filter.
    """
    if info is None:
        info = params.obs_noise.fisher_info
    if P0 is None:
        P0 = stationary_var_x(params)
    if P0 < 0:
        raise ValueError("P0 must be nonnegative")
    Q = params.Q
    R = params.s_N**2 * info
    P = _kernels.riccati(float(P0), params.gamma, Q, R, float(info), int(horizon))
    P_inf = 1.0 / stationary_information(params.gamma, Q, R, info)
    return GainSchedule(Q, R, info, P, P * info / R, P_inf, P_inf * info / R)


def kf_gain_schedule(params: SystemParams, horizon: int, P0: float | None = None) -> GainSchedule:
    return gain_schedule(params, horizon, P0, info=1.0)


# ----------------------------------------------------------------------
# single steps
# ----------------------------------------------------------------------
def kf_step(state: FilterState, y: float, gamma: float, K: float) -> FilterState:
    pred = gamma * state.estimate
    return replace(state, estimate=pred + K * (y - pred), step=state.step + 1)


def gf_step(state: FilterState, y: float, params: SystemParams, K: float) -> FilterState:
    v = params.obs_noise
    s = params.s_N
    pred = params.gamma * state.estimate
    z = s * v.score(y / s)
    return replace(state, estimate=pred + K * (z - v.fisher_info * pred), step=state.step + 1)


def centered_gf_step(state: FilterState, y: float, params: SystemParams, K: float) -> FilterState:
    s = params.s_N
    pred = params.gamma * state.estimate
    return replace(
        state, estimate=pred + K * s * params.obs_noise.score((y - pred) / s), step=state.step + 1
    )


# ----------------------------------------------------------------------
# whole-trajectory filters
# ----------------------------------------------------------------------
def naive_batch_filter(y, tau: int) -> np.ndarray:
    """Block averages: every t in batch k gets the mean of y over batch k.

    A trailing partial batch is averaged over the observations it has.
    """
    y = np.asarray(y, dtype=float)
    tau = int(tau)
    if tau < 1:
        raise ValueError("tau must be at least 1")
    if tau > y.size:
        raise ValueError(f"tau={tau} exceeds the series length {y.size}")
    n_full = y.size // tau
    out = np.empty_like(y)
    if n_full:
        head = y[: n_full * tau].reshape(n_full, tau)
        out[: n_full * tau] = np.repeat(head.mean(axis=1), tau)
    if y.size > n_full * tau:
        out[n_full * tau :] = y[n_full * tau :].mean()
    return out


def trivial_filters(y) -> tuple[np.ndarray, np.ndarray]:
    """(stationary-mean estimates, raw-observation estimates)."""
    y = np.asarray(y, dtype=float)
    return np.zeros_like(y), y.copy()


def _gains(sched: GainSchedule, horizon: int, gain_mode: GainMode) -> np.ndarray:
    if gain_mode is GainMode.STATIONARY:
        return np.full(horizon, sched.K_inf)
    return sched.K


def run_filter(
    params: SystemParams,
    trajectory: Trajectory | np.ndarray,
    mode: Mode | str,
    gain_mode: GainMode | str = GainMode.RECURSIVE,
    *,
    P0: float | None = None,
    x0: float = 0.0,
    tau: int | None = None,
    schedule: GainSchedule | None = None,
) -> np.ndarray:
    """Estimates x_hat_1..x_hat_T for one trajectory (or raw observation vector).

    ``schedule`` lets callers reuse a precomputed gain schedule across
    replications; it must match the mode (I = 1 for KF, I(v) otherwise).
    """
    mode = Mode(mode)
    gain_mode = GainMode(gain_mode)
    y = trajectory.y if isinstance(trajectory, Trajectory) else np.asarray(trajectory, dtype=float)
    T = y.size
    if mode is Mode.TRIVIAL_MEAN:
        return trivial_filters(y)[0]
    if mode is Mode.TRIVIAL_OBS:
        return trivial_filters(y)[1]
    if mode is Mode.NAIVE_BATCH:
        if tau is None:
            raise ValueError("naive_batch mode needs tau")
        return naive_batch_filter(y, tau) if T else np.empty(0)
    if tau is not None:
        raise ValueError(f"tau is only meaningful for naive_batch, not {mode.value}")
    if T == 0:
        return np.empty(0)

    info = 1.0 if mode is Mode.KF else params.obs_noise.fisher_info
    if schedule is None:
        schedule = gain_schedule(params, T, P0, info=info)
    elif schedule.info != info or schedule.K.size < T:
        raise ValueError(f"gain schedule (I={schedule.info}, length {schedule.K.size}) does not fit mode {mode.value}")
    K = _gains(schedule, T, gain_mode)[:T]
    gamma = params.gamma
    s = params.s_N

    if mode is Mode.KF:
        return _kernels.affine_scan(gamma * (1.0 - K), K * y, float(x0))
    v = params.obs_noise
    if mode is Mode.GF:
        z = s * v.score(y / s)
        return _kernels.affine_scan(gamma * (1.0 - K * info), K * z, float(x0))
    return _kernels.centered_scan(
        np.ascontiguousarray(y), gamma, np.ascontiguousarray(K), s, v.kernel_code, v.kernel_params, float(x0)
    )


def gaussian_reduction_gap(params: SystemParams, trajectory: Trajectory) -> dict[str, float]:
    """Max |GF - KF| and |CGF - KF| when all three run on identical gains.

    Only meaningful for Gaussian observation noise, where both score
    filters coincide with the Kalman filter.
    """
    sched = gain_schedule(params, len(trajectory))
    kf = _kernels.affine_scan(params.gamma * (1.0 - sched.K), sched.K * trajectory.y, 0.0)
    gf = run_filter(params, trajectory, Mode.GF, schedule=sched)
    cgf = run_filter(params, trajectory, Mode.CGF, schedule=sched)
    return {"gf": float(np.max(np.abs(gf - kf))), "cgf": float(np.max(np.abs(cgf - kf)))}
