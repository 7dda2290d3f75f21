"""The scaled scalar linear system and its simulator.

    X_{t+1} = gamma X_t + g w_t,   gamma = 1 - 1/N,  g = 1/sqrt(N)
    Y_t     = X_t + s_N v_t
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .noise_models import NoiseModel


@dataclass(frozen=True)
class SystemParams:
    N: int
    s_N: float
    signal_noise: NoiseModel = field(default_factory=NoiseModel.gaussian)
    obs_noise: NoiseModel = field(default_factory=NoiseModel.gaussian)

    def __post_init__(self):
        if self.N <= 1:
            # gamma must lie in (0, 1)
            raise ValueError(f"N must exceed 1, got {self.N}")
        if not self.s_N > 0:
            raise ValueError(f"s_N must be positive, got {self.s_N}")

    @property
    def gamma(self) -> float:
        return 1.0 - 1.0 / self.N

    @property
    def g(self) -> float:
        return 1.0 / math.sqrt(self.N)

    @property
    def Q(self) -> float:
        return 1.0 / self.N

    def stationary_var_x(self) -> float:
        return stationary_var_x(self)

    def with_s(self, s_N: float) -> "SystemParams":
        return SystemParams(self.N, s_N, self.signal_noise, self.obs_noise)


def stationary_var_x(params: SystemParams) -> float:
    """Stationary Var(X_t) = (1/N) / (1 - gamma^2) = 1 / (2 - 1/N)."""
    return 1.0 / (2.0 - 1.0 / params.N)


@dataclass(frozen=True)
class Trajectory:
    x: np.ndarray
    y: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        if self.x.shape != self.y.shape:
            raise ValueError("x and y must have equal length")

    def __len__(self) -> int:
        return self.x.size

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "x", "y"])
        for t, (xt, yt) in enumerate(zip(self.x, self.y), start=1):
            writer.writerow([t, repr(float(xt)), repr(float(yt))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def simulate(params: SystemParams, horizon: int, x0: float = 0.0, rng_seed=None) -> Trajectory:
    """Simulate ``horizon`` steps; ``x[0]`` is the state after the first transition.

    ``rng_seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be at least 1, got {horizon}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    w = params.signal_noise.sample(horizon, rng)
    v = params.obs_noise.sample(horizon, rng)
    return propagate(params, w, v, x0, seed=rng_seed if isinstance(rng_seed, int) else None)


def propagate(params: SystemParams, w, v, x0: float = 0.0, seed=None) -> Trajectory:
    """Run the system on given noise sequences (useful for test doubles)."""
    gamma = params.gamma
    # X_t = gamma X_{t-1} + g w_{t-1}, seeded with X_0 = x0
    zi = np.array([gamma * x0])
    x, _ = lfilter([1.0], [1.0, -gamma], params.g * np.asarray(w, dtype=float), zi=zi)
    y = x + params.s_N * np.asarray(v, dtype=float)
    return Trajectory(x, y, seed)
