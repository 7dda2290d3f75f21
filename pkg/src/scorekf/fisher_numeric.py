"""Grid densities of weighted noise sums and their Fisher information.

Used to check numerically that the aggregated signal noise

    W = (1/sqrt(N)) * sum_{s=1..tau} gamma^(s-1) w_s

becomes Gaussian in the Fisher-information sense: the standardized
information ``delta = I(W) Var(W) - 1`` is nonnegative and decays like 1/tau.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .noise_models import Family, NoiseModel

DENSITY_FLOOR = 1e-300
# FFT round-off sits near 1e-16 of the peak; cells below this fraction of the
# peak carry no usable derivative information and are dropped from the integral.
ROUNDOFF_CUTOFF = 1e-12


class GridResolutionError(ValueError):
    def __init__(self, required: float, got: float):
        super().__init__(f"grid half-width {got:.6g} too small; need at least {required:.6g}")
        self.required = required


class FloorDominatedWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class GridSpec:
    n_points: int = 2**14
    half_width: float | None = None
    sd_multiple: float = 12.0


@dataclass(frozen=True)
class DensityGrid:
    half_width: float
    n_points: int
    values: np.ndarray
    dx: float

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.n_points) - self.n_points // 2) * self.dx

    def integral(self) -> float:
        return float(integrate.trapezoid(self.values, dx=self.dx))

    def mean(self) -> float:
        return float(np.sum(self.x * self.values) * self.dx)

    def variance(self) -> float:
        x = self.x
        m = self.mean()
        return float(np.sum((x - m) ** 2 * self.values) * self.dx)

    def rescaled(self, a: float) -> "DensityGrid":
        """Grid of the density of a*X (a > 0): same samples on a stretched axis."""
        return DensityGrid(self.half_width * a, self.n_points, self.values / a, self.dx * a)


def _tail_point(model: NoiseModel, level: float = 1e-14) -> float:
    """Smallest |x| beyond which the unit-variance density stays below ``level``."""
    hi = 1.0
    while model.density(hi) >= level:
        hi *= 2.0
    lo = 0.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if model.density(mid) >= level:
            lo = mid
        else:
            hi = mid
    return hi


def required_half_width(model: NoiseModel, weights, sd_multiple: float = 12.0) -> float:
    a = np.abs(np.asarray(weights, dtype=float))
    sd = math.sqrt(float(np.sum(a**2)))
    return max(sd_multiple * sd, float(a.max()) * _tail_point(model))


def density_of_weighted_sum(model: NoiseModel, weights, grid_spec: GridSpec = GridSpec()) -> DensityGrid:
    """Density of sum_i weights_i * w_i for i.i.d. w_i ~ model, on a uniform grid.

    Each scaled density is sampled on the grid and the densities are
    convolved one at a time in the Fourier domain (largest weight first).
    """
    a = np.asarray(weights, dtype=float)
    if a.size == 0 or np.any(a == 0):
        raise ValueError("weights must be nonempty and nonzero")
    n = int(grid_spec.n_points)
    if n < 16 or n & (n - 1):
        raise ValueError("n_points must be a power of two >= 16")
    need = required_half_width(model, a, grid_spec.sd_multiple)
    L = need if grid_spec.half_width is None else float(grid_spec.half_width)
    if L < need * (1 - 1e-12):
        raise GridResolutionError(need, L)

    dx = 2.0 * L / n
    x = (np.arange(n) - n // 2) * dx
    order = np.argsort(-np.abs(a), kind="stable")
    spectrum = None
    for ai in a[order]:
        comp = model.density(x / abs(ai)) / abs(ai)
        if model.family is not Family.GAUSSIAN and ai < 0:
            comp = comp[::-1] if n % 2 else np.roll(comp[::-1], 1)
        f = np.fft.rfft(np.fft.ifftshift(comp)) * dx
        spectrum = f if spectrum is None else spectrum * f
    values = np.fft.fftshift(np.fft.irfft(spectrum / dx, n))
    values = np.maximum(values, 0.0)
    mass = float(integrate.trapezoid(values, dx=dx))
    if abs(mass - 1.0) > 1e-6:
        raise GridResolutionError(need * 1.5, L)
    return DensityGrid(L, n, values / mass, dx)


def _fisher_functional(values: np.ndarray, dx: float) -> tuple[float, float]:
    f = values
    d = np.zeros_like(f)
    d[2:-2] = (-f[4:] + 8 * f[3:-1] - 8 * f[1:-3] + f[:-4]) / (12 * dx)
    cut = max(DENSITY_FLOOR, ROUNDOFF_CUTOFF * float(f.max()))
    keep = f > cut
    keep[:2] = keep[-2:] = False
    info = float(np.sum(d[keep] ** 2 / f[keep]) * dx)
    dropped_mass = float(np.sum(f[~keep]) * dx)
    return info, dropped_mass


def fisher_of_grid(grid: DensityGrid, return_check: bool = False):
    """Discrete Fisher functional int (f')^2 / f dx with fourth-order differences.

    With ``return_check`` also returns the value recomputed on the grid with
    doubled spacing, as a convergence diagnostic.
    """
    info, dropped = _fisher_functional(grid.values, grid.dx)
    if dropped > 0.01:
        warnings.warn(f"{dropped:.2%} of the mass sits at the density floor", FloorDominatedWarning, stacklevel=2)
    if return_check:
        coarse, _ = _fisher_functional(grid.values[::2], 2 * grid.dx)
        return info, coarse
    return info


@dataclass(frozen=True)
class InfoReport:
    tau: int
    variance: float
    fisher: float
    product_minus_one: float

    @property
    def delta(self) -> float:
        return self.product_minus_one


def signal_weights(N: int, tau: int) -> np.ndarray:
    gamma = 1.0 - 1.0 / N
    return gamma ** np.arange(tau) / math.sqrt(N)


def info_report(model: NoiseModel, N: int, tau: int, grid_spec: GridSpec = GridSpec()) -> InfoReport:
    grid = density_of_weighted_sum(model, signal_weights(N, tau), grid_spec)
    var = grid.variance()
    fisher = fisher_of_grid(grid)
    return InfoReport(int(tau), var, fisher, fisher * var - 1.0)


def loglog_slope(taus, deltas) -> float:
    taus = np.asarray(taus, dtype=float)
    deltas = np.asarray(deltas, dtype=float)
    ok = deltas > 0
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(taus[ok]), np.log(deltas[ok]), 1)[0])


def clt_rate_experiment(
    model: NoiseModel, N: int, tau_list, grid_spec: GridSpec = GridSpec()
) -> tuple[list[InfoReport], float]:
    """delta(tau) for each tau and the fitted slope of log delta against log tau."""
    taus = [int(t) for t in tau_list]
    if any(b <= a for a, b in zip(taus, taus[1:])):
        raise ValueError("tau_list must be strictly increasing")
    if any(t < 1 or t > N for t in taus):
        raise ValueError("each tau must lie in [1, N]")
    reports = [info_report(model, N, t, grid_spec) for t in taus]
    return reports, loglog_slope(taus, [r.delta for r in reports])
