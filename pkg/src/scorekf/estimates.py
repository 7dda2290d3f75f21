"""Replication-level aggregation shared by the harness and the oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats


def ci_half_width(samples, level: float = 0.95) -> float:
    """Student-t half width for the mean of i.i.d. replication values."""
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n < 2:
        return float("nan")
    return float(stats.t.ppf(0.5 + level / 2, n - 1) * x.std(ddof=1) / math.sqrt(n))


@dataclass(frozen=True)
class MseEstimate:
    filter_mode: str
    mean_sq_error: float
    bias: float
    ci_half_width: float
    bias_ci_half_width: float
    replications: int

    @classmethod
    def from_replications(cls, mode: str, sq_errors, errors) -> "MseEstimate":
        sq = np.asarray(sq_errors, dtype=float)
        er = np.asarray(errors, dtype=float)
        return cls(mode, float(sq.mean()), float(er.mean()), ci_half_width(sq), ci_half_width(er), int(sq.size))

    @property
    def mse(self) -> float:
        return self.mean_sq_error


def paired_difference(a, b) -> tuple[float, float]:
    """Mean and 95% half width of a - b over matched replications."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return float(d.mean()), ci_half_width(d)


def replication_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Seed for replication ``index``; depends only on (master_seed, index)."""
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
