"""Monte Carlo harness: stationary bias/MSE per filter, regimes, and rate fits.

Every replication draws its own trajectory from a seed derived only from
``(master_seed, replication_index)``, runs all requested filters on it and
reports time-averaged post-burn-in error statistics. Aggregates are formed
in replication order, so serial and threaded runs agree bit for bit.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .crlb import crlb, default_tau
from .estimates import MseEstimate, paired_difference, replication_seed
from .filters import GainMode, Mode, gain_schedule, run_filter
from .noise_models import NoiseModel
from .oracle_pf import ParticleDegeneracyError, pf_run
from .state_space import SystemParams, propagate, simulate

ORACLE = "oracle"


class FilterFailure(RuntimeError):
    def __init__(self, mode: str, seed_index: int, cause: Exception):
        super().__init__(f"filter {mode} failed in replication {seed_index}: {cause}")
        self.mode = mode
        self.seed_index = seed_index


def default_burn_in(params: SystemParams) -> int:
    """20 filter time constants, 1/K_inf = Theta(s_N sqrt(N))."""
    return 20 * math.ceil(params.s_N * math.sqrt(params.N))


# ----------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class ExperimentConfig:
    params: SystemParams
    horizon: int
    burn_in: int
    replications: int
    filters: tuple[str, ...] = ("kf", "gf", "cgf", "trivial_mean", "trivial_obs")
    seed: int = 0
    tau_override: int | None = None
    gain_mode: GainMode = GainMode.RECURSIVE
    particles: int = 0

    def __post_init__(self):
        if not 0 <= self.burn_in < self.horizon:
            raise ValueError(f"burn_in ({self.burn_in}) must be below horizon ({self.horizon})")
        if self.replications < 2:
            raise ValueError("replications must be at least 2 (the CI needs a spread)")
        for f in self.filters:
            Mode(f)
        if self.particles and self.particles < 100:
            raise ValueError("particles must be 0 (no oracle) or at least 100")

    @property
    def tau(self) -> int:
        return self.tau_override if self.tau_override is not None else default_tau(self.params)

    @classmethod
    def build(
        cls,
        N: int,
        s_N: float,
        obs_noise: NoiseModel | str | Mapping = "gaussian",
        signal_noise: NoiseModel | str | Mapping = "gaussian",
        measured_steps: int | None = None,
        **kw,
    ) -> "ExperimentConfig":
        """Convenience constructor; ``measured_steps`` adds the default burn-in."""
        params = SystemParams(int(N), float(s_N), _model(signal_noise), _model(obs_noise))
        burn = kw.pop("burn_in", None)
        if burn is None:
            burn = default_burn_in(params)
        if measured_steps is not None:
            kw["horizon"] = burn + int(measured_steps)
        if "gain_mode" in kw:
            kw["gain_mode"] = GainMode(kw["gain_mode"])
        if "filters" in kw:
            kw["filters"] = tuple(kw["filters"])
        return cls(params=params, burn_in=int(burn), **kw)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ExperimentConfig":
        d = dict(d)
        known = {"N", "s_N", "obs_noise", "signal_noise", "horizon", "burn_in", "replications",
                 "filters", "seed", "tau_override", "gain_mode", "particles", "measured_steps"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key in ("N", "s_N", "replications"):
            if key not in d:
                raise ValueError(f"config is missing '{key}'")
        if "horizon" not in d and "measured_steps" not in d:
            raise ValueError("config needs 'horizon' or 'measured_steps'")
        return cls.build(
            d.pop("N"), d.pop("s_N"), d.pop("obs_noise", "gaussian"), d.pop("signal_noise", "gaussian"), **d
        )

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(load_config_file(path))

    def to_dict(self) -> dict[str, Any]:
        return {
            "N": self.params.N,
            "s_N": self.params.s_N,
            "obs_noise": self.params.obs_noise.to_config(),
            "signal_noise": self.params.signal_noise.to_config(),
            "horizon": self.horizon,
            "burn_in": self.burn_in,
            "replications": self.replications,
            "filters": list(self.filters),
            "seed": self.seed,
            "tau_override": self.tau_override,
            "gain_mode": self.gain_mode.value,
            "particles": self.particles,
        }


def _model(m) -> NoiseModel:
    return m if isinstance(m, NoiseModel) else NoiseModel.from_config(m)


def load_config_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        return tomllib.loads(text)
    return json.loads(text)


# ----------------------------------------------------------------------
# replications
# ----------------------------------------------------------------------
@dataclass
class ExperimentResult:
    config: ExperimentConfig
    estimates: list[MseEstimate]
    sq_errors: dict[str, np.ndarray] = field(repr=False)
    errors: dict[str, np.ndarray] = field(repr=False)
    lower_bound: float = float("nan")

    def get(self, mode: str) -> MseEstimate:
        for e in self.estimates:
            if e.filter_mode == mode:
                return e
        raise KeyError(mode)

    def paired(self, a: str, b: str) -> tuple[float, float]:
        """MSE(a) - MSE(b) with a 95% half width over matched replications."""
        return paired_difference(self.sq_errors[a], self.sq_errors[b])


STREAM_CHUNK = 1 << 21


class _Runner:
    """Per-config state shared by all replications (read-only)."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        p = config.params
        modes = [Mode(f) for f in config.filters]
        self.schedules = {}
        if Mode.KF in modes:
            self.schedules[Mode.KF] = gain_schedule(p, config.horizon, info=1.0)
        if Mode.GF in modes or Mode.CGF in modes:
            sched = gain_schedule(p, config.horizon)
            self.schedules[Mode.GF] = self.schedules[Mode.CGF] = sched
        self.modes = modes

    def __call__(self, i: int) -> dict[str, tuple[float, float]]:
        cfg = self.config
        rng = np.random.default_rng(replication_seed(cfg.seed, i))
        if cfg.horizon > STREAM_CHUNK and not cfg.particles:
            return self._streamed(i, rng)
        p = cfg.params
        traj = simulate(p, cfg.horizon, rng_seed=rng)
        b = cfg.burn_in
        out = {}
        for mode in self.modes:
            est = self._filter(i, mode, traj, self.schedules.get(mode))
            err = est[b:] - traj.x[b:]
            out[mode.value] = (float(np.mean(err * err)), float(np.mean(err)))
        if cfg.particles:
            try:
                est = pf_run(p, traj, cfg.particles, 0.5, rng)
            except ParticleDegeneracyError as exc:
                raise FilterFailure(ORACLE, i, exc) from exc
            err = est[b:] - traj.x[b:]
            out[ORACLE] = (float(np.mean(err * err)), float(np.mean(err)))
        return out

    def _filter(self, i, mode, traj, schedule, x0=0.0):
        cfg = self.config
        try:
            est = run_filter(
                cfg.params, traj, mode, cfg.gain_mode, schedule=schedule, x0=x0,
                tau=cfg.tau if mode is Mode.NAIVE_BATCH else None,
            )
        except Exception as exc:  # noqa: BLE001 - re-raised with context
            raise FilterFailure(mode.value, i, exc) from exc
        if not np.all(np.isfinite(est)):
            raise FilterFailure(mode.value, i, FloatingPointError("non-finite estimate"))
        return est

    def _streamed(self, i, rng) -> dict[str, tuple[float, float]]:
        """Long horizons in fixed chunks so memory does not grow with the horizon.

        Noise is drawn chunk by chunk, so the stream differs from the one-shot
        path; it is still a deterministic function of (seed, i).
        """
        cfg = self.config
        p = cfg.params
        chunk = STREAM_CHUNK
        if Mode.NAIVE_BATCH in self.modes:
            chunk = cfg.tau * max(1, chunk // cfg.tau)
        x_last = 0.0
        est_last = {m: 0.0 for m in self.modes}
        sq = {m: 0.0 for m in self.modes}
        lin = {m: 0.0 for m in self.modes}
        for start in range(0, cfg.horizon, chunk):
            n = min(chunk, cfg.horizon - start)
            w = p.signal_noise.sample(n, rng)
            v = p.obs_noise.sample(n, rng)
            traj = propagate(p, w, v, x_last)
            x_last = float(traj.x[-1])
            skip = max(0, cfg.burn_in - start)
            for mode in self.modes:
                sched = self.schedules.get(mode)
                if sched is not None:
                    sched = replace(sched, P=sched.P[start : start + n], K=sched.K[start : start + n])
                est = self._filter(i, mode, traj, sched, est_last[mode])
                est_last[mode] = float(est[-1])
                if skip < n:
                    err = est[skip:] - traj.x[skip:]
                    sq[mode] += float(np.dot(err, err))
                    lin[mode] += float(err.sum())
        m = cfg.horizon - cfg.burn_in
        return {mode.value: (sq[mode] / m, lin[mode] / m) for mode in self.modes}


def run_experiment(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    runner = _Runner(config)
    idx = range(config.replications)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            per_rep = list(pool.map(runner, idx))
    else:
        per_rep = [runner(i) for i in idx]
    names = list(per_rep[0])
    sq = {n: np.array([r[n][0] for r in per_rep]) for n in names}
    er = {n: np.array([r[n][1] for r in per_rep]) for n in names}
    estimates = [MseEstimate.from_replications(n, sq[n], er[n]) for n in names]
    lb = crlb(config.params, config.tau).lower_bound if config.params.s_N >= 1 else float("nan")
    return ExperimentResult(config, estimates, sq, er, lb)


def estimate_mse(config: ExperimentConfig, threads: int = 1) -> list[MseEstimate]:
    return run_experiment(config, threads).estimates


# ----------------------------------------------------------------------
# regimes
# ----------------------------------------------------------------------
class Regime(str, Enum):
    NEGLIGIBLE_SNR = "NegligibleSNR"
    LARGE_SNR = "LargeSNR"
    BALANCED = "Balanced"
    LOW_SNR_WINDOW = "LowSNRWindow"


@dataclass(frozen=True)
class RegimeLabel:
    label: Regime
    s_over_sqrtN: float
    s_times_sqrtN: float

    @property
    def balanced(self) -> bool:
        """LowSNRWindow is the s_N <= 1 corner of the balanced regime."""
        return self.label in (Regime.BALANCED, Regime.LOW_SNR_WINDOW)


def classify_regime(params: SystemParams, cutoff: float = 10.0) -> RegimeLabel:
    """``>>`` means a ratio of at least ``cutoff``; ``<<`` at most ``1/cutoff``.

    Boundaries are inclusive up to a relative 1e-12 so that exact grid points
    such as s_N * sqrt(N) = 0.1 land on the extreme side.
    """
    r_hi = params.s_N / math.sqrt(params.N)
    r_lo = params.s_N * math.sqrt(params.N)
    eps = 1e-12
    if r_hi >= cutoff * (1.0 - eps):
        label = Regime.NEGLIGIBLE_SNR
    elif r_lo <= (1.0 + eps) / cutoff:
        label = Regime.LARGE_SNR
    elif params.s_N <= 1.0:
        label = Regime.LOW_SNR_WINDOW
    else:
        label = Regime.BALANCED
    return RegimeLabel(label, r_hi, r_lo)


# ----------------------------------------------------------------------
# rate fits
# ----------------------------------------------------------------------
def s_from_rule(N: int, rule: str | float) -> float:
    """Noise scale for a given N: 'sqrtN', 'nquarter' or a fixed number."""
    if isinstance(rule, (int, float)):
        return float(rule)
    key = str(rule).lower()
    if key in ("sqrtn", "sqrt"):
        return math.sqrt(N)
    if key in ("nquarter", "quarter"):
        return N**0.25
    try:
        return float(key)
    except ValueError:
        raise ValueError(f"unknown s_rule {rule!r}") from None


@dataclass
class RateFit:
    slope: float
    points: list[dict[str, float]]
    inconclusive: bool = False


def _fit(xs, ys) -> float:
    xs = np.asarray(xs, dtype=float)
    ys = np.abs(np.asarray(ys, dtype=float))
    ok = ys > 0
    if ok.sum() < 2 or np.ptp(xs[ok]) == 0:
        return float("nan")
    return float(np.polyfit(np.log(xs[ok]), np.log(ys[ok]), 1)[0])


def _check_N_list(N_list: Sequence[int]) -> list[int]:
    Ns = [int(n) for n in N_list]
    if len(Ns) < 3 or any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ValueError("N_list must be increasing with at least 3 points")
    return Ns


def _steps(N: int, measured_steps: int, steps_per_N: float | None) -> int:
    # correlation time grows like s_N sqrt(N), so fixed budgets starve large N
    return measured_steps if steps_per_N is None else max(1, math.ceil(steps_per_N * N))


def rate_fit_bias(
    obs_noise,
    N_list: Sequence[int],
    s_rule: str | float = "sqrtN",
    replications: int = 50,
    seed: int = 0,
    mode: str = "gf",
    signal_noise="gaussian",
    measured_steps: int = 100_000,
    threads: int = 1,
    steps_per_N: float | None = None,
) -> RateFit:
    """|bias| of one filter across N with s_N from ``s_rule``; slope of log|bias| on log s_N.

    ``steps_per_N`` overrides ``measured_steps`` with ceil(steps_per_N * N).
    """
    points = []
    for N in _check_N_list(N_list):
        s = s_from_rule(N, s_rule)
        cfg = ExperimentConfig.build(
            N, s, obs_noise, signal_noise, measured_steps=_steps(N, measured_steps, steps_per_N),
            replications=replications, filters=(mode,), seed=seed,
        )
        est = run_experiment(cfg, threads).get(mode)
        points.append(dict(N=N, s_N=s, bias=est.bias, bias_ci=est.bias_ci_half_width, mse=est.mse, mse_ci=est.ci_half_width))
    inconclusive = all(abs(p["bias"]) <= p["bias_ci"] for p in points)
    slope = _fit([p["s_N"] for p in points], [p["bias"] for p in points])
    return RateFit(slope, points, inconclusive)


def rate_fit_mse_gap(
    obs_noise,
    N_list: Sequence[int],
    s_rule: str | float = "sqrtN",
    replications: int = 50,
    seed: int = 0,
    signal_noise="gaussian",
    measured_steps: int = 100_000,
    threads: int = 1,
    steps_per_N: float | None = None,
) -> RateFit:
    """GF and centered-GF MSE minus the batched bound (tau = s_N) across N.

    The slope is that of log|MSE_gf - bound| against log N; each point also
    carries the gap in units of 1/sqrt(N).
    """
    points = []
    for N in _check_N_list(N_list):
        s = s_from_rule(N, s_rule)
        cfg = ExperimentConfig.build(
            N, s, obs_noise, signal_noise, measured_steps=_steps(N, measured_steps, steps_per_N),
            replications=replications, filters=("kf", "gf", "cgf"), seed=seed,
        )
        res = run_experiment(cfg, threads)
        lb = res.lower_bound
        gf, cgf, kf = res.get("gf"), res.get("cgf"), res.get("kf")
        d_cgf, d_cgf_ci = res.paired("cgf", "gf")
        d_kf, d_kf_ci = res.paired("kf", "gf")
        points.append(dict(
            N=N, s_N=s, lower_bound=lb,
            mse_gf=gf.mse, mse_gf_ci=gf.ci_half_width,
            mse_cgf=cgf.mse, mse_cgf_ci=cgf.ci_half_width,
            mse_kf=kf.mse, mse_kf_ci=kf.ci_half_width,
            gap_gf=gf.mse - lb, gap_cgf=cgf.mse - lb,
            gap_gf_scaled=(gf.mse - lb) * math.sqrt(N),
            cgf_minus_gf=d_cgf, cgf_minus_gf_ci=d_cgf_ci,
            kf_minus_gf=d_kf, kf_minus_gf_ci=d_kf_ci,
        ))
    slope = _fit([p["N"] for p in points], [p["gap_gf"] for p in points])
    inconclusive = all(abs(p["gap_gf"]) <= p["mse_gf_ci"] for p in points)
    return RateFit(slope, points, inconclusive)
