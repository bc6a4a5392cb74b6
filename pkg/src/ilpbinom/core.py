"""Probability kernels for two independent binomial arms.

Binomial coefficients and beta functions are handled in log space so that
group sizes in the thousands do not overflow; ``theta in {0, 1}`` gives
exact point masses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln
from scipy.stats import binom

__all__ = [
    "Design",
    "Outcome",
    "Theta",
    "binom_pmf",
    "binom_pmf_vector",
    "log_binom",
    "joint_pmf",
    "log_beta",
    "reg_inc_beta",
    "beta_quantile",
    "clopper_pearson",
]


@dataclass(frozen=True)
class Design:
    """Fixed group sizes of a two-arm trial (control first)."""

    n_c: int
    n_d: int

    def __post_init__(self):
        if int(self.n_c) != self.n_c or int(self.n_d) != self.n_d:
            raise ValueError("group sizes must be integers")
        if self.n_c < 1 or self.n_d < 1:
            raise ValueError(f"group sizes must be >= 1, got ({self.n_c}, {self.n_d})")

    @property
    def n(self) -> int:
        return self.n_c + self.n_d

    @property
    def size(self) -> int:
        """Number of outcomes in the sample space."""
        return (self.n_c + 1) * (self.n_d + 1)

    def contains(self, outcome: "Outcome") -> bool:
        return 0 <= outcome.s_c <= self.n_c and 0 <= outcome.s_d <= self.n_d


@dataclass(frozen=True)
class Outcome:
    s_c: int
    s_d: int


@dataclass(frozen=True)
class Theta:
    theta_c: float
    theta_d: float

    def __post_init__(self):
        for v in (self.theta_c, self.theta_d):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"success probability {v} outside [0, 1]")


def log_binom(n, k):
    """Log of the binomial coefficient; ``-inf`` outside ``0 <= k <= n``.

    Accepts scalars or numpy arrays.
    """
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    valid = (k >= 0) & (k <= n)
    with np.errstate(invalid="ignore"):
        out = gammaln(n + 1) - gammaln(np.where(valid, k, 0) + 1) - gammaln(np.where(valid, n - k, 0) + 1)
    out = np.where(valid, out, -np.inf)
    return out if out.ndim else float(out)


# scipy's pmf overflows internally for subnormal theta; the mass such a theta
# moves off zero is far below double precision, so treat it as zero
_TINY = 1e-290


def _snap(theta):
    return np.where(theta < _TINY, 0.0, theta)


def binom_pmf(n: int, s: int, theta: float) -> float:
    if not 0 <= s <= n:
        raise ValueError(f"successes {s} outside [0, {n}]")
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta {theta} outside [0, 1]")
    return float(binom.pmf(s, n, _snap(theta)))


def binom_pmf_vector(n: int, theta: float) -> np.ndarray:
    """pmf of Bin(n, theta) at 0..n as a length ``n + 1`` array."""
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta {theta} outside [0, 1]")
    return binom.pmf(np.arange(n + 1), n, _snap(theta))


def binom_pmf_matrix(n: int, thetas) -> np.ndarray:
    """Rows are ``binom_pmf_vector(n, theta)`` for each theta."""
    thetas = np.asarray(thetas, dtype=float)
    if np.any((thetas < 0) | (thetas > 1)):
        raise ValueError("theta outside [0, 1]")
    return binom.pmf(np.arange(n + 1)[None, :], n, _snap(thetas.reshape(-1))[:, None])


def joint_pmf(design: Design, outcome: Outcome, theta: Theta) -> float:
    if not design.contains(outcome):
        raise ValueError(f"{outcome} not in sample space of {design}")
    return binom_pmf(design.n_c, outcome.s_c, theta.theta_c) * binom_pmf(
        design.n_d, outcome.s_d, theta.theta_d
    )


def log_beta(a: float, b: float) -> float:
    if a <= 0 or b <= 0:
        raise ValueError(f"beta function needs positive arguments, got ({a}, {b})")
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def _betacf(x: float, a: float, b: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 10000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (x={x}, a={a}, b={b})")


def reg_inc_beta(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x {x} outside [0, 1]")
    if a <= 0 or b <= 0:
        raise ValueError(f"parameters must be positive, got ({a}, {b})")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    log_front = a * math.log(x) + b * math.log1p(-x) - log_beta(a, b)
    if x < (a + 1.0) / (a + b + 2.0):
        return min(1.0, math.exp(log_front) * _betacf(x, a, b) / a)
    return max(0.0, 1.0 - math.exp(log_front) * _betacf(1.0 - x, b, a) / b)


def beta_quantile(p: float, a: float, b: float) -> float:
    """Inverse of ``reg_inc_beta`` in x by monotone bisection."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {p} outside [0, 1]")
    if p == 0.0:
        return 0.0
    if p == 1.0:
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > 1e-15:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if reg_inc_beta(mid, a, b) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def clopper_pearson(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    """Equal-tailed exact binomial confidence interval."""
    if trials < 1 or not 0 <= successes <= trials:
        raise ValueError(f"need 0 <= successes <= trials, got {successes}/{trials}")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level {level} outside (0, 1)")
    tail = (1.0 - level) / 2.0
    lo = 0.0 if successes == 0 else beta_quantile(tail, successes, trials - successes + 1)
    hi = 1.0 if successes == trials else beta_quantile(1.0 - tail, successes + 1, trials - successes)
    return lo, hi
