"""Linear power objectives over decision vectors.

Average power over the alternative triangle ``theta_D >= theta_C`` is
linear in the decision vector. With uniform (or independent integer beta)
weights each outcome's coefficient has a closed form in beta functions:

    2 C(nC,sC) C(nD,sD) B(aD,bD) sum_{j<aD} B(aC+j, bC+bD) / ((bD+j) B(j+1,bD))

with ``a(s) = s + a0`` and ``b(s) = n - s + b0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy.special import betaln, logsumexp

from .core import Theta, binom_pmf_matrix, log_binom
from .space import SampleSpace

__all__ = [
    "BetaPrior",
    "ObjectiveSpec",
    "avg_power_coeffs",
    "weighted_avg_power_coeffs",
    "margin_avg_power_coeffs",
    "alt_power_rows",
    "adaptive_simpson",
    "QuadratureError",
]


class QuadratureError(ArithmeticError):
    def __init__(self, message, achieved):
        super().__init__(message)
        self.achieved = achieved


@dataclass(frozen=True)
class BetaPrior:
    """Independent Beta(alpha_c, beta_c) x Beta(alpha_d, beta_d) weights."""

    alpha_c: int = 1
    beta_c: int = 1
    alpha_d: int = 1
    beta_d: int = 1

    def __post_init__(self):
        for v in (self.alpha_c, self.beta_c, self.alpha_d, self.beta_d):
            if isinstance(v, bool) or int(v) != v or v < 1:
                raise ValueError(f"prior parameters must be integers >= 1, got {v!r}")

    def as_tuple(self):
        return (int(self.alpha_c), int(self.beta_c), int(self.alpha_d), int(self.beta_d))


@dataclass(frozen=True)
class ObjectiveSpec:
    """``kind`` in {"average", "weighted_average", "maximin", "margin_average"}."""

    kind: str = "average"
    prior: Optional[BetaPrior] = None
    alt_points: tuple = field(default_factory=tuple)
    delta: float = 0.0

    def __post_init__(self):
        if self.kind not in ("average", "weighted_average", "maximin", "margin_average"):
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.kind == "weighted_average" and self.prior is None:
            raise ValueError("weighted_average objective needs a prior")
        if self.kind == "maximin" and not self.alt_points:
            raise ValueError("maximin objective needs alternative points")
        if self.kind == "margin_average" and not 0.0 <= self.delta < 1.0:
            raise ValueError(f"margin delta must lie in [0, 1), got {self.delta}")

    def describe(self) -> dict:
        out = {"kind": self.kind}
        if self.prior is not None:
            out["prior"] = list(self.prior.as_tuple())
        if self.alt_points:
            out["alt_points"] = [[t.theta_c, t.theta_d] for t in self.alt_points]
        if self.kind == "margin_average":
            out["delta"] = self.delta
        return out


def _log_triangle_integrals(space: SampleSpace, prior: BetaPrior) -> np.ndarray:
    """log of C(nC,sC) C(nD,sD) * int_{tD >= tC} tC^(aC-1)(1-tC)^(bC-1) tD^(aD-1)(1-tD)^(bD-1)."""
    n_c, n_d = space.design.n_c, space.design.n_d
    a0c, b0c, a0d, b0d = prior.as_tuple()
    s_c, s_d = space.s_c, space.s_d
    a_c = s_c + a0c
    b_c = n_c - s_c + b0c
    a_d = s_d + a0d
    b_d = n_d - s_d + b0d
    out = np.empty(space.size)
    log_bin = log_binom(n_c, s_c) + log_binom(n_d, s_d)
    # terms j = 0 .. a_D - 1, vectorised per distinct a_D
    for ad in np.unique(a_d):
        rows = a_d == ad
        j = np.arange(ad)[None, :]
        ac = a_c[rows][:, None]
        bc = b_c[rows][:, None]
        bd = b_d[rows][:, None]
        terms = betaln(ac + j, bc + bd) - np.log(bd + j) - betaln(j + 1, bd)
        out[rows] = log_bin[rows] + betaln(ad, b_d[rows]) + logsumexp(terms, axis=1)
    return out


def _prior_triangle_mass(prior: BetaPrior) -> Fraction:
    """B(a0C,b0C) B(a0D,b0D) Q(tD >= tC), exact for integer parameters."""
    a0c, b0c, a0d, b0d = prior.as_tuple()

    def beta(a, b):
        return Fraction(math.factorial(a - 1) * math.factorial(b - 1), math.factorial(a + b - 1))

    total = Fraction(0)
    for j in range(a0d):
        total += beta(a0c + j, b0c + b0d) / ((b0d + j) * beta(j + 1, b0d))
    return beta(a0d, b0d) * total


def avg_power_coeffs(space: SampleSpace) -> np.ndarray:
    """Average power coefficients: ``d @ coeffs`` is the mean power over ``theta_D >= theta_C``."""
    return weighted_avg_power_coeffs(space, BetaPrior())


def weighted_avg_power_coeffs(space: SampleSpace, prior: BetaPrior) -> np.ndarray:
    """Coefficients under independent beta weights restricted to the triangle (sum to 1)."""
    if not isinstance(prior, BetaPrior):
        prior = BetaPrior(*prior)
    scale = float(1 / _prior_triangle_mass(prior))
    return np.exp(_log_triangle_integrals(space, prior)) * scale


def _binom_upper_mass(n: int, x: np.ndarray) -> np.ndarray:
    """``int_x^1 C(n,s) t^s (1-t)^(n-s) dt`` for s = 0..n, rows over x.

    Equals ``(1 - I_x(s+1, n-s+1)) / (n+1)``, written as the finite sum
    ``P(Bin(n+1, x) <= s) / (n+1)``.
    """
    pmf = binom_pmf_matrix(n + 1, np.clip(x, 0.0, 1.0))
    return np.cumsum(pmf[:, : n + 1], axis=1) / (n + 1)


def adaptive_simpson(f, a: float, b: float, abs_tol: float, max_depth: int = 40):
    """Vector-valued adaptive Simpson rule.

    ``f`` maps a 1-d array of abscissae to an array of shape ``(len(x), ...)``.
    An interval is accepted once every component meets its share of
    ``abs_tol``. Returns ``(integral, error_estimate)``.
    """
    if b <= a:
        fa = f(np.array([a]))[0]
        return np.zeros_like(fa), 0.0
    length = b - a
    x = np.array([a, 0.5 * (a + b), b])
    fx = f(x)
    stack = [(a, b, fx[0], fx[1], fx[2], _simpson(b - a, fx[0], fx[1], fx[2]), 0)]
    total = np.zeros_like(fx[0])
    err_total = 0.0
    worst_unresolved = 0.0
    while stack:
        lo, hi, flo, fmid, fhi, whole, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        xs = np.array([0.5 * (lo + mid), 0.5 * (mid + hi)])
        fq = f(xs)
        left = _simpson(mid - lo, flo, fq[0], fmid)
        right = _simpson(hi - mid, fmid, fq[1], fhi)
        diff = np.max(np.abs(left + right - whole))
        allowed = abs_tol * (hi - lo) / length
        if diff <= 15.0 * allowed or depth >= max_depth:
            if diff > 15.0 * allowed:
                worst_unresolved = max(worst_unresolved, diff / 15.0)
            total = total + left + right + (left + right - whole) / 15.0
            err_total += diff / 15.0
        else:
            stack.append((mid, hi, fmid, fq[1], fhi, right, depth + 1))
            stack.append((lo, mid, flo, fq[0], fmid, left, depth + 1))
    if worst_unresolved > 0.0 and err_total > abs_tol:
        raise QuadratureError(f"adaptive Simpson did not reach {abs_tol}", achieved=err_total)
    return total, err_total


def _simpson(h, fa, fm, fb):
    return h / 6.0 * (fa + 4.0 * fm + fb)


def margin_avg_power_coeffs(space: SampleSpace, delta: float, abs_tol: float = 1e-9) -> np.ndarray:
    """Average power coefficients over the shifted triangle ``theta_D >= theta_C + delta``.

    Each coefficient is ``2/(1-delta)^2`` times a one-dimensional integral over
    ``theta_C in [0, 1-delta]`` of the control binomial kernel and the
    developmental upper-tail mass, integrated by adaptive Simpson.
    """
    if not 0.0 <= delta < 1.0:
        raise ValueError(f"delta must lie in [0, 1), got {delta}")
    n_c, n_d = space.design.n_c, space.design.n_d
    top = 1.0 - delta
    scale = 2.0 / top**2

    def integrand(x):
        kc = binom_pmf_matrix(n_c, x)
        kd = _binom_upper_mass(n_d, x + delta)
        return np.einsum("ka,kb->kab", kc, kd)

    # per-coefficient tolerance after scaling
    vals, _ = adaptive_simpson(integrand, 0.0, top, abs_tol / scale)
    return (scale * vals).reshape(-1)


def alt_power_rows(space: SampleSpace, alt_points: Sequence[Theta]) -> np.ndarray:
    """Outcome probabilities at each alternative point, shape ``(J, |S|)``."""
    if len(alt_points) == 0:
        return np.zeros((0, space.size))
    tc = np.array([t.theta_c for t in alt_points], dtype=float)
    td = np.array([t.theta_d for t in alt_points], dtype=float)
    if np.any((tc < 0) | (tc > 1) | (td < 0) | (td > 1)):
        raise ValueError("alternative point outside [0, 1]^2")
    pc = binom_pmf_matrix(space.design.n_c, tc)
    pd = binom_pmf_matrix(space.design.n_d, td)
    return np.einsum("ja,jb->jab", pc, pd).reshape(tc.size, -1)
