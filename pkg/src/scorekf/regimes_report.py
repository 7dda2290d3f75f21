"""Closed-form regime map over an (N, s_N) grid.

Every number in a row comes from a fixed point or a closed form, so the
map is deterministic and cheap; Monte Carlo checks of individual cells
belong to the harness.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .crlb import RegimeWarning, crlb, goggin_stationary_J, kf_stationary_J
from .harness import Regime, classify_regime
from .noise_models import NoiseModel, check_dissipativity
from .state_space import SystemParams, stationary_var_x

DEFAULT_N = (10**3, 10**4, 10**5, 10**6)
DEFAULT_RATIOS = tuple(np.logspace(-3, 2, 11).tolist())

LOW_SNR_NOTE = "unresolved - KF default"


@dataclass(frozen=True)
class RegimeMapRow:
    N: int
    s_N: float
    s_ratio: float
    regime: str
    recommended_filter: str
    lower_bound: float
    trivial_mean_mse: float
    trivial_obs_mse: float
    kf_mse_pred: float
    gf_mse_pred: float
    tau: int
    note: str = ""


def _recommend(label: Regime, params: SystemParams, centered_ok: bool) -> tuple[str, str]:
    if label is Regime.NEGLIGIBLE_SNR:
        return "trivial_mean", ""
    if label is Regime.LARGE_SNR:
        return "trivial_obs", ""
    if label is Regime.LOW_SNR_WINDOW:
        return "kf", LOW_SNR_NOTE
    # the non-centered filter's relative gap is negligible only for s_N >> N^(1/4)
    if params.s_N <= params.N**0.25 and centered_ok:
        return "cgf", ""
    return "gf", ""


def build_regime_map(
    N_list=DEFAULT_N,
    s_ratio_list=DEFAULT_RATIOS,
    obs_model: NoiseModel | None = None,
    signal_model: NoiseModel | None = None,
    cutoff: float = 10.0,
) -> list[RegimeMapRow]:
    """One row per (N, s_N = ratio * sqrt(N)).

    The lower bound uses tau = round(s_N) clipped to [1, N].
    """
    if not len(N_list) or not len(s_ratio_list):
        raise ValueError("N_list and s_ratio_list must be nonempty")
    obs_model = obs_model or NoiseModel.gaussian()
    signal_model = signal_model or NoiseModel.gaussian()
    centered_ok = check_dissipativity(obs_model).passed
    rows = []
    for N in N_list:
        for ratio in s_ratio_list:
            s = float(ratio) * math.sqrt(N)
            p = SystemParams(int(N), s, signal_model, obs_model)
            label = classify_regime(p, cutoff).label
            tau = int(min(max(1, round(s)), N))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RegimeWarning)
                lb = crlb(p, tau).lower_bound
            rec, note = _recommend(label, p, centered_ok)
            rows.append(RegimeMapRow(
                N=int(N), s_N=s, s_ratio=float(ratio), regime=label.value,
                recommended_filter=rec, lower_bound=lb,
                trivial_mean_mse=stationary_var_x(p), trivial_obs_mse=s * s,
                kf_mse_pred=1.0 / kf_stationary_J(p), gf_mse_pred=1.0 / goggin_stationary_J(p),
                tau=tau, note=note,
            ))
    return rows


def summarize(rows: list[RegimeMapRow]) -> dict:
    counts: dict[str, int] = {}
    for r in rows:
        counts[r.regime] = counts.get(r.regime, 0) + 1
    balanced = [r for r in rows if r.regime == Regime.BALANCED.value]
    return {
        "rows": len(rows),
        "N": sorted({r.N for r in rows}),
        "label_counts": dict(sorted(counts.items())),
        "recommended_counts": dict(sorted(
            (k, sum(1 for r in rows if r.recommended_filter == k)) for k in {r.recommended_filter for r in rows}
        )),
        "balanced_gf_not_worse_than_kf": all(r.gf_mse_pred <= r.kf_mse_pred for r in balanced),
    }


def rows_as_dicts(rows: list[RegimeMapRow]) -> list[dict]:
    return [asdict(r) for r in rows]
