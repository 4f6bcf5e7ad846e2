"""Student-t significance thresholds for standardized correlations.

Under a bivariate-normal null hypothesis of zero correlation, the statistic
T = |rho| sqrt(n_e - 2) / sqrt(1 - rho^2) follows a Student-t distribution
with n_e - 2 degrees of freedom. The two-sided critical value at level phi
gives a statistically motivated default for the taper threshold t0, and the
corresponding critical correlation rho_0 below which estimates are
indistinguishable from sampling noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.special import betainc

from .errors import DegenerateStatisticError, InvalidEnsembleSizeError

__all__ = [
    "student_t_cdf",
    "student_t_quantile",
    "critical_t0",
    "critical_rho",
    "t_statistic",
    "adaptive_t0",
    "FixedT0",
    "StudentT0",
    "PercentileT0",
    "T0Strategy",
    "parse_t0_strategy",
    "format_t0_strategy",
]

_PROB_TOL = 1e-12  # bisection tolerance in probability


def student_t_cdf(x: float, nu: float) -> float:
    """CDF of the Student-t distribution via the regularized incomplete beta."""
    if nu <= 0:
        raise ValueError(f"degrees of freedom must be positive, got {nu}")
    ib = float(betainc(nu / 2.0, 0.5, nu / (nu + x * x)))
    return 1.0 - 0.5 * ib if x >= 0.0 else 0.5 * ib


def student_t_quantile(nu: float, p: float) -> float:
    """Inverse CDF of the Student-t distribution with nu degrees of freedom.

    Computed by bisection on the incomplete-beta CDF until the probability
    residual is below 1e-12, which bounds the quantile error well inside
    the 1e-6 contract.
    """
    if nu < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {nu}")
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must be in (0, 1), got {p}")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -student_t_quantile(nu, 1.0 - p)

    lo, hi = 0.0, 1.0
    while student_t_cdf(hi, nu) < p:
        hi *= 2.0
        if hi > 1e300:
            raise ArithmeticError("quantile bracket expansion failed")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f = student_t_cdf(mid, nu)
        if abs(f - p) < _PROB_TOL and (hi - lo) < 1e-9 * max(1.0, mid):
            return mid
        if f < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def critical_t0(n_e: int, phi: float) -> float:
    """Two-sided critical value T_phi = t_{n_e-2, 1-phi/2}."""
    if n_e < 4:
        raise InvalidEnsembleSizeError(f"ensemble size must be >= 4, got {n_e}")
    if not 0.0 < phi < 1.0:
        raise ValueError(f"significance level must be in (0, 1), got {phi}")
    return student_t_quantile(n_e - 2, 1.0 - phi / 2.0)


def critical_rho(n_e: int, phi: float) -> float:
    """Critical correlation rho_0 = T / sqrt(T^2 + (n_e - 2)).

    Correlation magnitudes below rho_0 are not statistically distinguishable
    from zero at level phi; rho_0 decreases approximately as 1/sqrt(n_e).
    """
    t = critical_t0(n_e, phi)
    return t / math.sqrt(t * t + (n_e - 2))


def t_statistic(rho_hat: float, n_e: int) -> float:
    """Zero-correlation test statistic |rho| sqrt(n_e - 2) / sqrt(1 - rho^2)."""
    if n_e < 4:
        raise InvalidEnsembleSizeError(f"ensemble size must be >= 4, got {n_e}")
    r = abs(float(rho_hat))
    if r >= 1.0:
        raise DegenerateStatisticError("t statistic undefined at |rho| = 1")
    return r * math.sqrt(n_e - 2) / math.sqrt(1.0 - r * r)


def adaptive_t0(t_values: Sequence[float], p: float = 0.9) -> float:
    """Percentile-based threshold: the p-quantile of observed t values.

    Uses linear interpolation between order statistics. Intended to be
    applied per data source, so each source gets its own threshold that
    tracks the magnitude of its standardized correlations.
    """
    values = np.asarray(t_values, dtype=float)
    if values.size == 0:
        raise ValueError("adaptive threshold requires a non-empty sample")
    if not 0.0 < p < 1.0:
        raise ValueError(f"percentile must be in (0, 1), got {p}")
    return float(np.quantile(values, p, method="linear"))


# --- threshold selection strategies for power-law / logistic tapers ---


@dataclass(frozen=True)
class FixedT0:
    value: float

    def __post_init__(self):
        if self.value <= 0.0:
            raise ValueError(f"t0 must be > 0, got {self.value}")


@dataclass(frozen=True)
class StudentT0:
    phi: float

    def __post_init__(self):
        if not 0.0 < self.phi < 1.0:
            raise ValueError(f"phi must be in (0, 1), got {self.phi}")


@dataclass(frozen=True)
class PercentileT0:
    p: float = 0.9

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"percentile must be in (0, 1), got {self.p}")


T0Strategy = Union[FixedT0, StudentT0, PercentileT0]


def parse_t0_strategy(text: str) -> T0Strategy:
    """Parse a threshold strategy: "fixed:2", "student:phi=0.05", or "p90"."""
    s = text.strip().lower()
    if s.startswith("t0="):
        s = s[3:]
    if s.startswith("fixed:"):
        return FixedT0(float(s.split(":", 1)[1]))
    if s.startswith("student:"):
        body = s.split(":", 1)[1]
        if body.startswith("phi="):
            body = body[4:]
        return StudentT0(float(body))
    if s.startswith("p") and s[1:].replace(".", "").isdigit():
        return PercentileT0(float(s[1:]) / 100.0)
    raise ValueError(f"unknown t0 strategy {text!r}")


def format_t0_strategy(strategy: T0Strategy) -> str:
    if isinstance(strategy, FixedT0):
        return f"fixed:{strategy.value:g}"
    if isinstance(strategy, StudentT0):
        return f"student:phi={strategy.phi:g}"
    if isinstance(strategy, PercentileT0):
        return f"p{strategy.p * 100:g}"
    raise TypeError(f"unknown t0 strategy {strategy!r}")
