"""Bootstrap particle filter used as a numerical stand-in for the optimal filter."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _kernels
from .estimates import MseEstimate, replication_seed
from .state_space import SystemParams, Trajectory, simulate


class ParticleDegeneracyError(ArithmeticError):
    def __init__(self, step: int):
        super().__init__(f"particle weights collapsed at step {step}")
        self.step = step


class UnreliableOracleError(ArithmeticError):
    pass


def pf_run(
    params: SystemParams,
    trajectory: Trajectory,
    n_particles: int,
    resample_threshold: float = 0.5,
    rng_seed=None,
    x0: float = 0.0,
    return_ess: bool = False,
):
    """Posterior-mean estimates from a bootstrap filter with systematic resampling.

    Particles start at ``x0`` (the known initial state), move through the
    state transition with fresh signal noise and are reweighted by the
    observation density ``h((y - x)/s_N)/s_N``. Resampling happens when the
    effective sample size drops below ``resample_threshold * n_particles``.
    """
    if n_particles < 100:
        raise ValueError("n_particles must be at least 100")
    if not 0 < resample_threshold <= 1:
        raise ValueError("resample_threshold must lie in (0, 1]")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    y = trajectory.y
    T = y.size
    P = int(n_particles)
    gamma, g, s = params.gamma, params.g, params.s_N
    obs = params.obs_noise

    particles = np.full(P, float(x0))
    logw = np.zeros(P)
    est = np.empty(T)
    ess_trace = np.empty(T)
    code, kparams = obs.kernel_code, obs.kernel_params
    chunk = max(1, min(T, 4_000_000 // P))
    for start in range(0, T, chunk):
        stop = min(T, start + chunk)
        noise = params.signal_noise.sample((stop - start) * P, rng).reshape(stop - start, P)
        uniforms = rng.random(stop - start)
        failed = _kernels.pf_scan(
            y[start:stop], noise, uniforms, particles, logw, gamma, g, s, code, kparams,
            float(resample_threshold), est[start:stop], ess_trace[start:stop],
        )
        if failed >= 0:
            raise ParticleDegeneracyError(start + failed)
    if return_ess:
        return est, ess_trace
    return est


def _oracle_replication(params, horizon, burn_in, n_particles, master_seed, i, threshold):
    rng = np.random.default_rng(replication_seed(master_seed, i))
    traj = simulate(params, horizon, rng_seed=rng)
    try:
        est = pf_run(params, traj, n_particles, threshold, rng)
    except ParticleDegeneracyError:
        return None
    err = est[burn_in:] - traj.x[burn_in:]
    return float(np.mean(err**2)), float(np.mean(err))


def mse_star_estimate(
    params: SystemParams,
    horizon: int,
    burn_in: int,
    n_particles: int,
    replications: int,
    rng_seed: int,
    resample_threshold: float = 0.5,
    threads: int = 1,
) -> MseEstimate:
    """Stationary MSE of the particle filter, averaged over independent replications.

    Replications whose filter degenerates are dropped; more than 5% of them
    degenerating makes the estimate unusable.
    """
    if not 0 <= burn_in < horizon:
        raise ValueError("burn_in must satisfy 0 <= burn_in < horizon")
    if replications < 2:
        raise ValueError("need at least 2 replications for a confidence interval")

    def work(i):
        return _oracle_replication(params, horizon, burn_in, n_particles, rng_seed, i, resample_threshold)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(work, range(replications)))
    else:
        results = [work(i) for i in range(replications)]
    good = [r for r in results if r is not None]
    if len(results) - len(good) > 0.05 * replications:
        raise UnreliableOracleError(f"{len(results) - len(good)} of {replications} replications degenerated")
    sq, er = zip(*good)
    return MseEstimate.from_replications("oracle", sq, er)
