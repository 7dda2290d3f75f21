"""Unit-variance noise families.

Each family exposes its density ``h``, the (negated) score ``phi = -h'/h``
with two derivatives, the location Fisher information, and a sampler.
Parameters are always rescaled so that ``Var(v) = 1``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping

import numpy as np
from scipy import integrate, special, stats

from . import _kernels

QUAD_TOL = 1e-10
TAIL_MASS = 1e-12


class NoiseDomainError(ValueError):
    """Raised when a noise function is evaluated at a non-finite point."""


class QuadratureError(ArithmeticError):
    """Raised when adaptive quadrature fails to reach the requested tolerance."""


class Family(str, Enum):
    GAUSSIAN = "gaussian"
    LOGISTIC = "logistic"
    STUDENT_T = "student_t"
    MIXTURE = "gaussian_mixture"


_CODES = {
    Family.GAUSSIAN: _kernels.GAUSSIAN,
    Family.LOGISTIC: _kernels.LOGISTIC,
    Family.STUDENT_T: _kernels.STUDENT_T,
    Family.MIXTURE: _kernels.MIXTURE,
}

# Restricted Poincare constant R*(w): finite for these families, asserted
# analytically rather than computed. Student-t lacks moments of all orders,
# so R* is infinite there.
POINCARE_FINITE = {
    Family.GAUSSIAN: True,
    Family.LOGISTIC: True,
    Family.STUDENT_T: False,
    Family.MIXTURE: True,
}
GAUSSIAN_POINCARE_CONSTANT = 0.5


def _as_array(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NoiseDomainError("noise functions are defined for finite arguments only")
    return arr


def _ret(arr: np.ndarray, like):
    return float(arr) if np.ndim(like) == 0 else arr


@dataclass(frozen=True)
class NoiseModel:
    """A zero-mean, unit-variance noise law on the real line.

    Use the constructors :meth:`gaussian`, :meth:`logistic`,
    :meth:`student_t`, :meth:`mixture` or :meth:`from_config` rather than
    the raw initializer.
    """

    family: Family
    dof: int | None = None
    weights: tuple[float, ...] | None = None
    means: tuple[float, ...] | None = None
    sigmas: tuple[float, ...] | None = None
    scale: float = 1.0
    fisher_info: float = field(init=False)
    score_sup_norm_2nd: float = field(init=False)
    sup_norm_is_numeric: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "fisher_info", self._closed_form_fisher())
        sup, numeric = self._sup_phi2()
        object.__setattr__(self, "score_sup_norm_2nd", sup)
        object.__setattr__(self, "sup_norm_is_numeric", numeric)

    # ------------------------------------------------------------------
    # constructors
    # ------------------------------------------------------------------
    @classmethod
    def gaussian(cls) -> "NoiseModel":
        return cls(Family.GAUSSIAN, scale=1.0)

    @classmethod
    def logistic(cls) -> "NoiseModel":
        # Var = pi^2 s^2 / 3
        return cls(Family.LOGISTIC, scale=math.sqrt(3.0) / math.pi)

    @classmethod
    def student_t(cls, dof: int) -> "NoiseModel":
        if int(dof) != dof or dof <= 4:
            raise ValueError(f"student_t needs an integer dof > 4 (finite fourth moment), got {dof}")
        dof = int(dof)
        return cls(Family.STUDENT_T, dof=dof, scale=math.sqrt((dof - 2) / dof))

    @classmethod
    def mixture(cls, weights, means, sigmas) -> "NoiseModel":
        w = np.asarray(weights, dtype=float)
        mu = np.asarray(means, dtype=float)
        sg = np.asarray(sigmas, dtype=float)
        if not (w.shape == mu.shape == sg.shape) or w.ndim != 1 or w.size == 0:
            raise ValueError("weights, means and sigmas must be equal-length 1-d sequences")
        if np.any(w <= 0) or np.any(sg <= 0):
            raise ValueError("mixture weights and sigmas must be positive")
        w = w / w.sum()
        mu = mu - np.dot(w, mu)
        var = float(np.dot(w, sg**2 + mu**2))
        # leave already-standardized parameters untouched so configs round-trip exactly
        c = 1.0 if abs(var - 1.0) < 1e-12 else 1.0 / math.sqrt(var)
        return cls(
            Family.MIXTURE,
            weights=tuple(w.tolist()),
            means=tuple((mu * c).tolist()),
            sigmas=tuple((sg * c).tolist()),
            scale=c,
        )

    @classmethod
    def symmetric_mixture(cls, separation: float, sigma: float = 1.0) -> "NoiseModel":
        """Equal-weight two-component mixture at +-separation before rescaling."""
        return cls.mixture([0.5, 0.5], [-separation, separation], [sigma, sigma])

    @classmethod
    def from_config(cls, cfg: str | Mapping[str, Any]) -> "NoiseModel":
        if isinstance(cfg, str):
            cfg = {"family": cfg}
        fam = Family(cfg["family"])
        if fam is Family.GAUSSIAN:
            return cls.gaussian()
        if fam is Family.LOGISTIC:
            return cls.logistic()
        if fam is Family.STUDENT_T:
            if "dof" not in cfg:
                raise ValueError("student_t config requires 'dof'")
            return cls.student_t(cfg["dof"])
        for key in ("weights", "means", "sigmas"):
            if key not in cfg:
                raise ValueError(f"gaussian_mixture config requires '{key}'")
        return cls.mixture(cfg["weights"], cfg["means"], cfg["sigmas"])

    def to_config(self) -> dict[str, Any]:
        cfg: dict[str, Any] = {"family": self.family.value}
        if self.family is Family.STUDENT_T:
            cfg["dof"] = self.dof
        if self.family is Family.MIXTURE:
            cfg.update(weights=list(self.weights), means=list(self.means), sigmas=list(self.sigmas))
        return cfg

    @property
    def name(self) -> str:
        if self.family is Family.STUDENT_T:
            return f"student_t({self.dof})"
        return self.family.value

    @property
    def is_gaussian(self) -> bool:
        return self.family is Family.GAUSSIAN

    @property
    def poincare_finite(self) -> bool:
        return POINCARE_FINITE[self.family]

    @property
    def kernel_code(self) -> int:
        return _CODES[self.family]

    @property
    def kernel_params(self) -> np.ndarray:
        if self.family is Family.LOGISTIC:
            return np.array([self.scale])
        if self.family is Family.STUDENT_T:
            return np.array([float(self.dof), float(self.dof - 2)])
        if self.family is Family.MIXTURE:
            k = len(self.weights)
            return np.array([float(k), *self.weights, *self.means, *self.sigmas])
        return np.zeros(1)

    # ------------------------------------------------------------------
    # density and score
    # ------------------------------------------------------------------
    def log_density(self, x):
        arr = _as_array(x)
        fam = self.family
        if fam is Family.GAUSSIAN:
            out = -0.5 * arr**2 - 0.5 * math.log(2 * math.pi)
        elif fam is Family.LOGISTIC:
            s = self.scale
            u = np.abs(arr) / s
            out = -u - 2.0 * np.log1p(np.exp(-u)) - math.log(s)
        elif fam is Family.STUDENT_T:
            nu, a = self.dof, self.dof - 2.0
            const = (
                special.gammaln((nu + 1) / 2)
                - special.gammaln(nu / 2)
                - 0.5 * math.log(math.pi * a)
            )
            out = const - 0.5 * (nu + 1) * np.log1p(arr**2 / a)
        else:
            out = special.logsumexp(self._component_logpdf(arr), axis=0)
        return _ret(out, x)

    def density(self, x):
        return _ret(np.exp(self.log_density(x)), x)

    def _component_logpdf(self, arr):
        w = np.asarray(self.weights)[:, None]
        mu = np.asarray(self.means)[:, None]
        sg = np.asarray(self.sigmas)[:, None]
        flat = arr.reshape(1, -1)
        z = (flat - mu) / sg
        lp = np.log(w) - np.log(sg) - 0.5 * z**2 - 0.5 * math.log(2 * math.pi)
        return lp.reshape((len(self.weights),) + arr.shape)

    def score(self, x):
        """phi(x) = -h'(x)/h(x)."""
        arr = _as_array(x)
        out = _kernels.score_array(self.kernel_code, self.kernel_params, np.ascontiguousarray(arr).ravel())
        return _ret(out.reshape(arr.shape), x)

    def score_deriv(self, x, order: int = 1):
        if order not in (1, 2):
            raise ValueError(f"score_deriv supports order 1 or 2, got {order!r}")
        arr = _as_array(x)
        fam = self.family
        if fam is Family.GAUSSIAN:
            out = np.full(arr.shape, 1.0 if order == 1 else 0.0)
        elif fam is Family.LOGISTIC:
            s = self.scale
            u = 0.5 * arr / s
            sech2 = 1.0 / np.cosh(u) ** 2
            out = sech2 / (2 * s**2) if order == 1 else -sech2 * np.tanh(u) / (2 * s**3)
        elif fam is Family.STUDENT_T:
            nu, a = self.dof, self.dof - 2.0
            d = a + arr**2
            if order == 1:
                out = (nu + 1) * (a - arr**2) / d**2
            else:
                out = 2 * (nu + 1) * arr * (arr**2 - 3 * a) / d**3
        else:
            lp = self._component_logpdf(arr)
            r = np.exp(lp - special.logsumexp(lp, axis=0))
            mu = np.asarray(self.means).reshape((-1,) + (1,) * arr.ndim)
            sg = np.asarray(self.sigmas).reshape((-1,) + (1,) * arr.ndim)
            a = (arr - mu) / sg**2
            m1 = -(r * a).sum(0)                              # h'/h
            m2 = (r * (a**2 - 1 / sg**2)).sum(0)              # h''/h
            if order == 1:
                out = -m2 + m1**2
            else:
                m3 = (r * (-(a**3) + 3 * a / sg**2)).sum(0)   # h'''/h
                out = -m3 + 3 * m2 * m1 - 2 * m1**3
        return _ret(out, x)

    # ------------------------------------------------------------------
    # moments and information
    # ------------------------------------------------------------------
    def support_half_width(self, tail_mass: float = TAIL_MASS) -> float:
        """L with P(|v| > L) below ``tail_mass``."""
        fam = self.family
        if fam is Family.GAUSSIAN:
            return float(stats.norm.isf(tail_mass / 2))
        if fam is Family.LOGISTIC:
            return float(stats.logistic.isf(tail_mass / 2, scale=self.scale))
        if fam is Family.STUDENT_T:
            return float(stats.t.isf(tail_mass / 2, self.dof) * self.scale)
        z = stats.norm.isf(tail_mass / 2)
        return float(max(abs(m) + z * s for m, s in zip(self.means, self.sigmas)))

    def expect(self, fn, tol: float = QUAD_TOL) -> float:
        """E[fn(v)] by adaptive Gauss-Kronrod quadrature.

        The bulk (-L, L) carries all but ``TAIL_MASS`` of the probability; the
        two tails are integrated separately so heavy-tailed moments stay exact.
        """
        L = self.support_half_width()
        breaks = [-L, -1.0, 0.0, 1.0, L]
        if self.family is Family.MIXTURE:
            breaks = sorted(set(breaks) | {m for m in self.means if -L < m < L})
        breaks = [-np.inf, *breaks, np.inf]
        total, err = 0.0, 0.0
        for lo, hi in zip(breaks[:-1], breaks[1:]):
            val, e = integrate.quad(
                lambda t: fn(t) * self.density(t), lo, hi, epsabs=tol, epsrel=tol, limit=500
            )
            total += val
            err += e
        if err > 100 * tol:
            raise QuadratureError(f"quadrature reached only {err:.2e} (requested {tol:.0e})")
        return total

    def variance(self) -> float:
        return self.expect(lambda t: t * t)

    def fourth_moment(self) -> float:
        fam = self.family
        if fam is Family.GAUSSIAN:
            return 3.0
        if fam is Family.LOGISTIC:
            return 4.2  # excess kurtosis 6/5
        if fam is Family.STUDENT_T:
            return 3.0 * (self.dof - 2) / (self.dof - 4)
        w, mu, sg = (np.asarray(v) for v in (self.weights, self.means, self.sigmas))
        return float(np.dot(w, mu**4 + 6 * mu**2 * sg**2 + 3 * sg**4))

    def _closed_form_fisher(self) -> float:
        fam = self.family
        if fam is Family.GAUSSIAN:
            return 1.0
        if fam is Family.LOGISTIC:
            return 1.0 / (3.0 * self.scale**2)
        if fam is Family.STUDENT_T:
            nu = self.dof
            return (nu + 1) / (nu + 3) * nu / (nu - 2)
        return self.expect(lambda t: self.score(t) ** 2)

    def _sup_phi2(self) -> tuple[float, bool]:
        fam = self.family
        if fam is Family.GAUSSIAN:
            return 0.0, False
        if fam is Family.LOGISTIC:
            # max of sech^2(u) tanh(u) is 2/(3 sqrt 3)
            return 1.0 / (3.0 * math.sqrt(3.0) * self.scale**3), False
        grid = np.linspace(-200.0, 200.0, 400_001)
        return float(np.max(np.abs(self.score_deriv(grid, 2)))), True

    def sample(self, count: int, rng_seed=None) -> np.ndarray:
        """Draw ``count`` i.i.d. values; ``rng_seed`` is an int seed or a numpy Generator."""
        rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
        count = int(count)
        fam = self.family
        if fam is Family.GAUSSIAN:
            return rng.standard_normal(count)
        if fam is Family.LOGISTIC:
            return rng.logistic(0.0, self.scale, count)
        if fam is Family.STUDENT_T:
            return rng.standard_t(self.dof, count) * self.scale
        comp = rng.choice(len(self.weights), size=count, p=self.weights)
        return np.asarray(self.means)[comp] + np.asarray(self.sigmas)[comp] * rng.standard_normal(count)


def fisher_information(model: NoiseModel, method: str = "auto", tol: float = QUAD_TOL) -> float:
    """Location Fisher information I(v) = E[phi(v)^2].

    ``method="auto"`` returns the stored closed form where one exists;
    ``"quadrature"`` always integrates phi^2 h numerically.
    """
    if method == "auto":
        return model.fisher_info
    if method != "quadrature":
        raise ValueError(f"unknown method {method!r}")
    return model.expect(lambda t: model.score(t) ** 2, tol=tol)


@dataclass(frozen=True)
class DissipativityReport:
    zeta_hat: float
    growth_A: float
    growth_B: float
    tail_slope: float
    passed: bool

    @property
    def pass_(self) -> bool:
        return self.passed


def check_dissipativity(
    model: NoiseModel,
    grid_half_width: float = 50.0,
    grid_points: int = 201,
    mc_samples: int = 20_000,
    rng_seed: int = 0,
    zeta_floor: float = 1e-2,
) -> DissipativityReport:
    """Numerical check of strong dissipativity and linear growth of the score.

    Estimates ``E[phi(v + y)]`` by Monte Carlo on a symmetric grid of ``y``
    and reports the largest ``zeta`` with ``E[phi(v+y)] y >= zeta y^2`` on
    that grid. A finite grid cannot see the limit ``|y| -> inf``, so the
    check passes only when ``zeta_hat`` clears ``zeta_floor``; ``tail_slope``
    is the log-log slope of ``E[phi(v+y)]/y`` over the outer half of the
    grid (0 for linear drift, -1 for a bounded score, -2 for a redescending
    one).
    """
    if grid_points <= 0 or mc_samples <= 0:
        raise ValueError("grid_points and mc_samples must be positive")
    if grid_half_width <= 0:
        raise ValueError("grid_half_width must be positive")
    y = np.linspace(-grid_half_width, grid_half_width, 2 * (grid_points // 2) + 1)
    y = y[y != 0.0]
    v = model.sample(mc_samples, rng_seed)
    drift = np.array([model.score(v + yy).mean() for yy in y])
    ratio = drift / y
    zeta = float(ratio.min())

    outer = np.abs(y) >= 0.5 * grid_half_width
    pos = outer & (ratio > 0)
    if pos.sum() >= 2:
        tail_slope = float(np.polyfit(np.log(np.abs(y[pos])), np.log(ratio[pos]), 1)[0])
    else:
        tail_slope = float("nan")

    ay = np.abs(y)
    aphi = np.abs(model.score(y))
    B = max(float(np.polyfit(ay, aphi, 1)[0]), 0.0)
    # the intercept must cover the score between grid nodes too
    fine = np.linspace(-grid_half_width, grid_half_width, 100 * len(y) + 1)
    A = float(np.max(np.abs(model.score(fine)) - B * np.abs(fine)))
    finite = math.isfinite(A) and math.isfinite(B)
    return DissipativityReport(zeta, A, B, tail_slope, bool(zeta > zeta_floor and finite))


@dataclass(frozen=True)
class AssumptionReport:
    unit_variance: bool
    score_centered: bool
    information_identity: bool
    density_positive: bool
    finite_fourth_moment: bool
    bounded_phi2: bool
    details: dict

    @property
    def ok(self) -> bool:
        return all(
            (self.unit_variance, self.score_centered, self.information_identity,
             self.density_positive, self.finite_fourth_moment, self.bounded_phi2)
        )


def check_observation_assumptions(model: NoiseModel, tol: float = 1e-7) -> AssumptionReport:
    """Runtime check of the observation-noise contract by quadrature."""
    var = model.variance()
    mean_phi = model.expect(model.score)
    var_phi = model.expect(lambda t: model.score(t) ** 2)
    mean_dphi = model.expect(lambda t: model.score_deriv(t, 1))
    grid = np.linspace(-model.support_half_width(1e-6), model.support_half_width(1e-6), 20_001)
    h = model.density(grid)
    d2 = model.score_deriv(grid, 2)
    I = model.fisher_info
    details = dict(variance=var, mean_phi=mean_phi, var_phi=var_phi, mean_dphi=mean_dphi, fisher=I)
    return AssumptionReport(
        unit_variance=abs(var - 1) < 1e-8,
        score_centered=abs(mean_phi) < tol,
        information_identity=abs(var_phi - I) < tol * max(1, I) and abs(mean_dphi - I) < tol * max(1, I),
        density_positive=bool(np.all(h > 0) and np.all(np.isfinite(h)) and np.all(np.isfinite(d2))),
        finite_fourth_moment=math.isfinite(model.fourth_moment()),
        bounded_phi2=math.isfinite(model.score_sup_norm_2nd),
        details=details,
    )


def warn_if_outside_assumptions(model: NoiseModel, role: str) -> None:
    if role == "signal" and not model.poincare_finite:
        warnings.warn(f"{model.name} signal noise has an infinite restricted Poincare constant", stacklevel=2)
