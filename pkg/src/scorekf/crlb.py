"""Posterior Cramer-Rao machinery for the scaled system.

Two bounds are provided:

* the direct (unbatched) stationary bound 1/J, which keeps the Fisher
  information of the signal noise and is loose when w is non-Gaussian;
* the batched bound 1/barJ_inf, obtained by observing the system every
  ``tau`` steps and replacing the information of the aggregated signal
  noise W by 1/Var(W). Its error is of order 1/(tau * barJ_inf).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .filters import stationary_information
from .state_space import SystemParams, stationary_var_x


class RegimeWarning(UserWarning):
    """Parameters fall outside the range where a bound is known to be valid."""


def _positive_root(b: float, c: float) -> float:
    """Positive root of J^2 - b J - c = 0 for b, c >= 0."""
    return 0.5 * (b + math.sqrt(b * b + 4.0 * c))


def default_tau(params: SystemParams) -> int:
    return max(1, int(round(params.s_N)))


@dataclass(frozen=True)
class BatchParams:
    tau: int
    gamma_2tau: float
    sigma_W: float
    eIVe: float
    out_of_regime: bool = False

    @property
    def sigma_W_inv(self) -> float:
        return 1.0 / self.sigma_W


def sigma_W_direct(params: SystemParams, tau: int) -> float:
    k = np.arange(tau, dtype=float)
    return math.fsum(params.gamma ** (2.0 * k)) / params.N


def eIVe_direct(params: SystemParams, tau: int) -> float:
    k = np.arange(tau, dtype=float)
    return params.obs_noise.fisher_info / params.s_N**2 * math.fsum(params.gamma ** (-2.0 * k))


def batch_params(params: SystemParams, tau: int, regime_factor: float = 1.0, validate: bool = True) -> BatchParams:
    """Variance of the aggregated signal noise and the batch observation information.

    ``tau`` above ``regime_factor * N`` is allowed but flagged.
    """
    tau = int(tau)
    if tau < 1:
        raise ValueError("tau must be at least 1")
    out = tau > regime_factor * params.N
    if out:
        warnings.warn(f"tau={tau} exceeds {regime_factor}*N; batched bound is outside its regime", RegimeWarning, stacklevel=2)
    # 1 - gamma^2 and 1 - gamma^(2 tau) cancel badly for gamma near 1
    gamma = params.gamma
    log_g2 = 2.0 * math.log(gamma)
    g2t = math.exp(tau * log_g2)
    geo = -math.expm1(tau * log_g2) / ((1.0 - gamma) * (1.0 + gamma))
    sigma_W = geo / params.N
    # e'Ie = I/s^2 * sum_{k<tau} gamma^(-2k) = I/s^2 * (gamma^(-2 tau) - 1) / (gamma^(-2) - 1)
    try:
        growth = math.expm1(-tau * log_g2) / math.expm1(-log_g2)
    except OverflowError:
        raise ArithmeticError(f"batch information overflows for tau={tau}, N={params.N}") from None
    eIVe = params.obs_noise.fisher_info / params.s_N**2 * growth
    if validate and tau <= 10**7:
        for name, closed, direct in (
            ("sigma_W", sigma_W, sigma_W_direct(params, tau)),
            ("eIVe", eIVe, eIVe_direct(params, tau)),
        ):
            if abs(closed - direct) > 1e-12 * max(1.0, abs(direct)):
                raise ArithmeticError(f"{name}: closed form {closed!r} disagrees with direct sum {direct!r}")
    return BatchParams(tau, g2t, sigma_W, eIVe, out)


def barJ_closed_form(batch: BatchParams) -> float:
    sw_inv = batch.sigma_W_inv
    b = batch.eIVe + (1.0 - batch.gamma_2tau) * sw_inv
    c = batch.eIVe * batch.gamma_2tau * sw_inv
    return _positive_root(b, c)


def barJ_map(J: float, batch: BatchParams) -> float:
    sw_inv = batch.sigma_W_inv
    return batch.eIVe + J * sw_inv / (J + batch.gamma_2tau * sw_inv)


def barJ_iterate(batch: BatchParams, J0: float = 1.0, tol: float = 1e-12, max_iter: int = 10_000_000) -> np.ndarray:
    """Iterates J_0, J_1, ... of the batched recursion.

    Stops once the remaining distance to the fixed point, estimated from the
    observed contraction ratio as step * rho / (1 - rho), is below tol * J.
    """
    return _kernels.barJ_trace(batch.eIVe, batch.sigma_W_inv, batch.gamma_2tau, float(J0), float(tol), int(max_iter))


@dataclass(frozen=True)
class CrlbResult:
    tau: int
    barJ_inf: float
    barJ_iterated: float
    lower_bound: float
    slack_order: float
    unbatched_J: float
    barJ_trace: np.ndarray = field(repr=False)
    out_of_regime: bool = False
    low_noise_flag: bool = False

    @property
    def unbatched_bound(self) -> float:
        return 1.0 / self.unbatched_J


def unbatched_information(params: SystemParams) -> float:
    """Stationary J of the direct posterior bound, Q = N I(w), R = I(v)/s_N^2."""
    gamma = params.gamma
    Qc = params.N * params.signal_noise.fisher_info
    Rc = params.obs_noise.fisher_info / params.s_N**2
    b = Rc + (1.0 - gamma) * (1.0 + gamma) * Qc
    return _positive_root(b, gamma**2 * Qc * Rc)


def unbatched_crlb(params: SystemParams) -> float:
    return 1.0 / unbatched_information(params)


def barJ_stationary(batch: BatchParams, params: SystemParams, J0: float = 1.0) -> CrlbResult:
    closed = barJ_closed_form(batch)
    trace = barJ_iterate(batch, J0)
    return CrlbResult(
        tau=batch.tau,
        barJ_inf=closed,
        barJ_iterated=float(trace[-1]),
        lower_bound=1.0 / closed,
        slack_order=1.0 / (batch.tau * closed),
        unbatched_J=unbatched_information(params),
        barJ_trace=trace,
        out_of_regime=batch.out_of_regime,
        low_noise_flag=params.s_N < 1.0,
    )


def crlb(params: SystemParams, tau: int | None = None, regime_factor: float = 1.0) -> CrlbResult:
    """Batched lower bound with ``tau`` defaulting to round(s_N)."""
    if tau is None:
        tau = default_tau(params)
    return barJ_stationary(batch_params(params, tau, regime_factor), params)


def goggin_stationary_J(params: SystemParams) -> float:
    """Stationary information J^GF = 1/P_inf of the score-filter gain recursion."""
    I = params.obs_noise.fisher_info
    return stationary_information(params.gamma, params.Q, params.s_N**2 * I, I)


def kf_stationary_J(params: SystemParams) -> float:
    """1/P_inf of the Kalman filter run with R = s_N^2; P_inf is its exact stationary MSE."""
    return stationary_information(params.gamma, params.Q, params.s_N**2, 1.0)


@dataclass(frozen=True)
class SuboptimalityGap:
    abs_gap: float
    rel_gap: float


def kf_suboptimality_gap(params: SystemParams) -> SuboptimalityGap:
    """1/J^KF - 1/J^GF and the same gap relative to 1/J^GF."""
    j_gf = goggin_stationary_J(params)
    j_kf = kf_stationary_J(params)
    gap = 1.0 / j_kf - 1.0 / j_gf
    return SuboptimalityGap(gap, gap * j_gf)


def prior_variance_cap(params: SystemParams) -> float:
    return stationary_var_x(params)
