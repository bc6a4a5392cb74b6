"""Null boundary discretisation and the rows that bound the type I error.

For a convex region ``d`` and a grid ``theta_1 < ... < theta_K`` on the null
boundary ``theta_D = g0(theta_C)``, the rejection rate anywhere in the cell
``(theta_j, theta_{j+1})`` is at most

    p_j . d + max(0, slack_j . d)

where ``p_j`` holds the outcome probabilities at the grid point and
``slack_j`` is a Lipschitz correction built from the extreme values of the
two derivative kernels over the cell (``hbar`` and ``hunder`` below).
"""

from __future__ import annotations

import cmath
import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import Design, Outcome, binom_pmf_matrix, log_binom
from .space import IncidenceRows, SampleSpace, enumerate_space, incidence_rows

__all__ = [
    "BoundaryFn",
    "NullGrid",
    "NullConstraintSet",
    "make_grid",
    "build_p_rows",
    "build_slack_rows",
    "build_null_constraints",
    "hbar",
    "hunder",
    "cardano_roots",
    "kernel_cubic",
]

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class BoundaryFn:
    """Null boundary ``theta_D = g0(theta_C)``.

    ``kind`` is ``"identity"``, ``"margin"`` (``g0 = theta + delta``) or
    ``"custom"``. Custom boundaries supply ``g``/``dg`` callables (vectorised
    over numpy arrays) and the ``theta_C`` domain on which ``0 <= g <= 1``.
    """

    kind: str = "identity"
    delta: float = 0.0
    g: Optional[Callable] = field(default=None, compare=False, repr=False)
    dg: Optional[Callable] = field(default=None, compare=False, repr=False)
    domain: tuple = (0.0, 1.0)
    name: str = ""

    def __post_init__(self):
        if self.kind == "identity":
            object.__setattr__(self, "domain", (0.0, 1.0))
        elif self.kind == "margin":
            if not 0.0 < self.delta < 1.0:
                raise ValueError(f"margin delta must lie in (0, 1), got {self.delta}")
            object.__setattr__(self, "domain", (0.0, 1.0 - self.delta))
        elif self.kind == "custom":
            if self.g is None or self.dg is None:
                raise ValueError("custom boundary needs g and dg")
            lo, hi = self.domain
            if not 0.0 <= lo < hi <= 1.0:
                raise ValueError(f"bad custom domain {self.domain}")
        else:
            raise ValueError(f"unknown boundary kind {self.kind!r}")

    @classmethod
    def identity(cls) -> "BoundaryFn":
        return cls("identity")

    @classmethod
    def margin(cls, delta: float) -> "BoundaryFn":
        return cls("margin", delta=delta)

    @property
    def theta_max(self) -> float:
        return self.domain[1]

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "identity":
            return theta.copy() if theta.ndim else float(theta)
        if self.kind == "margin":
            # the domain end maps exactly to 1
            out = np.where(theta == self.domain[1], 1.0, theta + self.delta)
            return out if out.ndim else float(out)
        return self.g(theta)

    def derivative(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind in ("identity", "margin"):
            out = np.ones_like(theta)
            return out if out.ndim else 1.0
        return self.dg(theta)

    def describe(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "margin":
            out["delta"] = self.delta
        if self.kind == "custom":
            out["name"] = self.name
            out["domain"] = list(self.domain)
        return out


@dataclass(frozen=True)
class NullGrid:
    thetas: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.thetas, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("null grid needs at least two points")
        if np.any(np.diff(t) <= 0):
            raise ValueError("null grid must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "thetas", t)

    @property
    def size(self) -> int:
        return self.thetas.size

    def digest(self) -> str:
        return hashlib.sha256(self.thetas.tobytes()).hexdigest()[:16]


def make_grid(boundary: BoundaryFn, num: Optional[int] = None, step: Optional[float] = None) -> NullGrid:
    """Equidistant grid over the boundary domain with exact endpoints.

    Defaults: step 0.001 for the identity boundary (``K = 1001``) and
    ``K = 1000`` points otherwise.
    """
    lo, hi = boundary.domain
    if num is None and step is None:
        if boundary.kind == "identity":
            step = 0.001
        else:
            num = 1000
    if num is None:
        num = int(round((hi - lo) / step)) + 1
        if not math.isclose(lo + (num - 1) * step, hi, abs_tol=1e-12):
            raise ValueError(f"step {step} does not divide [{lo}, {hi}]")
    if num < 2:
        raise ValueError("grid needs at least two points")
    t = np.linspace(lo, hi, num)
    t[0], t[-1] = lo, hi
    return NullGrid(t)


def _check_grid(boundary: BoundaryFn, grid: NullGrid) -> None:
    lo, hi = boundary.domain
    if grid.thetas[0] != lo or grid.thetas[-1] != hi:
        raise ValueError(
            f"grid must start at {lo} and end at {hi}; got [{grid.thetas[0]}, {grid.thetas[-1]}]"
        )


def build_p_rows(space: SampleSpace, boundary: BoundaryFn, grid: NullGrid) -> np.ndarray:
    """Outcome probabilities at each null grid point, shape ``(K, |S|)``."""
    _check_grid(boundary, grid)
    t = grid.thetas
    pc = binom_pmf_matrix(space.design.n_c, t)
    pd = binom_pmf_matrix(space.design.n_d, np.clip(boundary(t), 0.0, 1.0))
    return np.einsum("ja,jb->jab", pc, pd).reshape(t.size, -1)


# ---------------------------------------------------------------------------
# derivative kernels


def _xlog(e, x):
    """``e * log(x)`` with ``0 * log(0) = 0``; broadcasts."""
    with np.errstate(divide="ignore", invalid="ignore"):
        out = e * np.log(x)
    return np.where(e == 0, 0.0, out)


def _log_kernel(theta, exps, boundary: BoundaryFn, with_slope: bool):
    """Log of ``[g0'] theta^e1 g0^e2 (1-theta)^e3 (1-g0)^e4``."""
    e1, e2, e3, e4 = exps
    g = np.clip(boundary(theta), 0.0, 1.0)
    out = _xlog(e1, theta) + _xlog(e2, g) + _xlog(e3, 1.0 - theta) + _xlog(e4, 1.0 - g)
    if with_slope:
        with np.errstate(divide="ignore"):
            out = out + np.log(boundary.derivative(theta))
    return out


def _kernel_exponents(design: Design, s_c, s_d, upper: bool):
    s_c = np.asarray(s_c)
    s_d = np.asarray(s_d)
    if upper:
        return (s_c, s_d - 1, design.n_c - s_c, design.n_d - s_d)
    return (s_c, s_d, design.n_c - s_c - 1, design.n_d - s_d)


def kernel_cubic(exps, delta: float) -> np.ndarray:
    """Cubic ``[a, b, c, d]`` (highest power first) whose sign is the sign of the
    kernel's derivative on ``(0, 1 - delta)`` for the margin boundary.

    The kernel ``theta^e1 (theta+delta)^e2 (1-theta)^e3 (1-theta-delta)^e4`` has
    log-derivative ``e1/t + e2/(t+delta) - e3/(1-t) - e4/(1-t-delta)``; clearing
    denominators leaves this cubic.
    """
    e1, e2, e3, e4 = (float(e) for e in exps)
    r = 1.0 - delta
    # monic cubics from their roots: prod (t - root)
    m1 = np.poly([-delta, 1.0, r])
    m2 = np.poly([0.0, 1.0, r])
    m3 = np.poly([0.0, -delta, r])
    m4 = np.poly([0.0, -delta, 1.0])
    return e1 * m1 + e2 * m2 + e3 * m3 + e4 * m4


def cardano_roots(a: float, b: float, c: float, d: float) -> list[float]:
    """Real parts of the three roots of ``a t^3 + b t^2 + c t + d``.

    Closed form with ``xi = (-1 + sqrt(-3)) / 2``. Roots that are real up to
    rounding are polished by Newton steps. ``a == 0`` falls back to the
    quadratic (or linear) formula.
    """
    scale = max(abs(a), abs(b), abs(c), abs(d))
    if scale == 0.0:
        return []
    if abs(a) <= 1e-14 * scale:
        return _quadratic_roots(b, c, d)
    d0 = b * b - 3.0 * a * c
    d1 = 2.0 * b**3 - 9.0 * a * b * c + 27.0 * a * a * d
    disc = cmath.sqrt(d1 * d1 - 4.0 * d0**3)
    big = (d1 + disc) / 2.0
    if abs(big) < abs((d1 - disc) / 2.0):
        # the other branch avoids cancellation and C ~ 0
        big = (d1 - disc) / 2.0
    if abs(big) <= 1e-300:
        return [-b / (3.0 * a)] * 3
    cc = big ** (1.0 / 3.0)
    xi = complex(-0.5, math.sqrt(3.0) / 2.0)
    roots = []
    for k in range(3):
        ck = xi**k * cc
        roots.append(-(b + ck + d0 / ck) / (3.0 * a))
    coeffs = (a, b, c, d)
    out = []
    for z in roots:
        x = z.real
        if abs(z.imag) <= 1e-6 * max(1.0, abs(z)):
            x = _polish(coeffs, x)
        out.append(x)
    return out


def _quadratic_roots(a, b, c):
    if a == 0.0:
        return [] if b == 0.0 else [-c / b]
    disc = b * b - 4.0 * a * c
    if disc < 0:
        return [-b / (2.0 * a)] * 2
    q = -0.5 * (b + math.copysign(math.sqrt(disc), b))
    r1 = q / a
    r2 = c / q if q != 0.0 else r1
    return [r1, r2]


def _polish(coeffs, x, steps=4):
    a, b, c, d = coeffs

    def p(t):
        return ((a * t + b) * t + c) * t + d

    def dp(t):
        return (3.0 * a * t + 2.0 * b) * t + c

    def ddp(t):
        return 6.0 * a * t + 2.0 * b

    best, best_res = x, abs(p(x))
    for _ in range(steps):
        slope = dp(x)
        if abs(slope) < 1e-9 * max(abs(a), abs(b), abs(c), 1.0):
            # near a double root: Newton on the derivative instead
            curv = ddp(x)
            if curv == 0.0:
                break
            x = x - slope / curv
        else:
            x = x - p(x) / slope
        res = abs(p(x))
        if res < best_res:
            best, best_res = x, res
    return best


def _margin_critical_points(exps_arrays, delta: float) -> np.ndarray:
    """Cardano candidates per outcome, shape ``(m, 3)`` (NaN where absent)."""
    e1, e2, e3, e4 = (np.asarray(e) for e in exps_arrays)
    m = e1.size
    out = np.full((m, 3), np.nan)
    cache = {}
    for i in range(m):
        key = (int(e1[i]), int(e2[i]), int(e3[i]), int(e4[i]))
        if key not in cache:
            a, b, c, d = kernel_cubic(key, delta)
            cache[key] = cardano_roots(a, b, c, d)
        roots = cache[key]
        out[i, : len(roots)] = roots
    return out


def _extreme_table(space: SampleSpace, boundary: BoundaryFn, lo, hi, upper: bool):
    """Log of the kernel extreme over ``[lo_j, hi_j]`` for every outcome.

    Returns ``(table, heuristic)`` with table shape ``(|S|, J)``; structural
    zeros are ``-inf``.
    """
    design = space.design
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    exps = _kernel_exponents(design, space.s_c, space.s_d, upper)
    structural = (space.s_d == 0) if upper else (space.s_c == design.n_c)
    table = np.full((space.size, lo.size), -np.inf)
    live = ~structural
    if not live.any() or lo.size == 0:
        return table, False
    ex = tuple(np.asarray(e)[live][:, None] for e in exps)
    pick = np.max if upper else np.min

    if boundary.kind == "custom":
        vals = _custom_extreme(ex, boundary, lo, hi, upper)
        table[live] = vals
        return table, True

    if boundary.kind == "identity":
        tot = ex[0] + ex[1]
        den = tot + ex[2] + ex[3]
        crit = np.where(den > 0, tot / np.where(den > 0, den, 1), lo[None, :])
        cands = [np.broadcast_to(lo, (ex[0].shape[0], lo.size)), np.broadcast_to(hi, (ex[0].shape[0], lo.size))]
        cands.append(np.clip(crit, lo[None, :], hi[None, :]))
    else:
        roots = _margin_critical_points(tuple(e[:, 0] for e in ex), boundary.delta)
        cands = [np.broadcast_to(lo, (ex[0].shape[0], lo.size)), np.broadcast_to(hi, (ex[0].shape[0], lo.size))]
        for k in range(3):
            r = roots[:, k : k + 1]
            r = np.where(np.isnan(r), lo[None, :], r)
            cands.append(np.clip(r, lo[None, :], hi[None, :]))
    vals = np.stack([_log_kernel(c, ex, boundary, upper) for c in cands], axis=-1)
    table[live] = pick(vals, axis=-1)
    return table, False


def _custom_extreme(ex, boundary, lo, hi, upper, samples=2001, refine=3):
    """Dense sampling plus golden-section refinement (no optimality guarantee)."""
    m = ex[0].shape[0]
    out = np.empty((m, lo.size))
    sign = 1.0 if upper else -1.0
    frac = np.linspace(0.0, 1.0, samples)
    for j in range(lo.size):
        t = lo[j] + (hi[j] - lo[j]) * frac
        t[-1] = hi[j]
        vals = sign * _log_kernel(t[None, :], ex, boundary, upper)
        best = vals.max(axis=1)
        top = np.argsort(-vals, axis=1, kind="stable")[:, :refine]
        for r in range(top.shape[1]):
            k = top[:, r]
            a = t[np.maximum(k - 1, 0)]
            b = t[np.minimum(k + 1, samples - 1)]
            for _ in range(80):
                x1 = b - _GOLDEN * (b - a)
                x2 = a + _GOLDEN * (b - a)
                f1 = sign * _log_kernel(x1[:, None], ex, boundary, upper)[:, 0]
                f2 = sign * _log_kernel(x2[:, None], ex, boundary, upper)[:, 0]
                left = f1 >= f2
                b = np.where(left, x2, b)
                a = np.where(left, a, x1)
                if np.all(b - a < 1e-12):
                    break
            x = 0.5 * (a + b)
            fx = sign * _log_kernel(x[:, None], ex, boundary, upper)[:, 0]
            best = np.maximum(best, fx)
        out[:, j] = sign * best
    return out


def _scalar_extreme(design, outcome, boundary, lo, hi, upper):
    lo_b, hi_b = boundary.domain
    if not (lo_b <= lo <= hi <= hi_b):
        raise ValueError(f"interval [{lo}, {hi}] outside boundary domain {boundary.domain}")
    if not design.contains(outcome):
        raise ValueError(f"{outcome} not in sample space of {design}")
    space = enumerate_space(design)
    i = space.index(outcome)
    # evaluate only the requested outcome
    sub = SampleSpace(
        design,
        space.s_c[i : i + 1],
        space.s_d[i : i + 1],
        space.succ_c[i : i + 1],
        space.succ_d[i : i + 1],
    )
    table, _ = _extreme_table(sub, boundary, np.array([lo]), np.array([hi]), upper)
    return math.exp(table[0, 0])


def hbar(design: Design, outcome: Outcome, boundary: BoundaryFn, lo: float, hi: float) -> float:
    """Max over ``[lo, hi]`` of ``g0' theta^sC g0^(sD-1) (1-theta)^(nC-sC) (1-g0)^(nD-sD)``.

    Returns 0 when ``s_D == 0`` (its coefficient vanishes).
    """
    return _scalar_extreme(design, outcome, boundary, lo, hi, upper=True)


def hunder(design: Design, outcome: Outcome, boundary: BoundaryFn, lo: float, hi: float) -> float:
    """Min over ``[lo, hi]`` of ``theta^sC g0^sD (1-theta)^(nC-sC-1) (1-g0)^(nD-sD)``.

    Returns 0 when ``s_C == n_C`` (its coefficient vanishes).
    """
    return _scalar_extreme(design, outcome, boundary, lo, hi, upper=False)


def slack_coefficients(space: SampleSpace, boundary: BoundaryFn, grid: NullGrid):
    """Per-outcome Lipschitz coefficients ``(m_D, m_C)``, each ``(|S|, K-1)``."""
    _check_grid(boundary, grid)
    design = space.design
    t = grid.thetas
    lo, hi = t[:-1], t[1:]
    log_width = np.log(hi - lo)[None, :]
    up, heur_up = _extreme_table(space, boundary, lo, hi, upper=True)
    dn, heur_dn = _extreme_table(space, boundary, lo, hi, upper=False)
    log_bin_d = (
        math.log(design.n_d) + log_binom(design.n_c, space.s_c) + log_binom(design.n_d - 1, space.s_d - 1)
    )
    log_bin_c = (
        math.log(design.n_c) + log_binom(design.n_c - 1, space.s_c) + log_binom(design.n_d, space.s_d)
    )
    m_d = np.exp(log_bin_d[:, None] + log_width + up)
    m_c = np.exp(log_bin_c[:, None] + log_width + dn)
    return m_d, m_c, heur_up or heur_dn


def build_slack_rows(
    space: SampleSpace,
    boundary: BoundaryFn,
    grid: NullGrid,
    inc: Optional[IncidenceRows] = None,
) -> np.ndarray:
    """Rows ``m_D^T A_D - m_C^T A_C`` for each grid cell, shape ``(K-1, |S|)``."""
    if inc is None:
        inc = incidence_rows(space)
    m_d, m_c, _ = slack_coefficients(space, boundary, grid)
    return np.asarray((inc.a_d.T @ m_d - inc.a_c.T @ m_c).T)


@dataclass(frozen=True)
class NullConstraintSet:
    p_rows: np.ndarray
    slack_rows: np.ndarray
    heuristic: bool = False

    def bound(self, d) -> np.ndarray:
        """Per-cell upper bound on the rejection rate of a convex region."""
        d = np.asarray(d, dtype=float)
        p = self.p_rows @ d
        s = self.slack_rows @ d
        return p[:-1] + np.maximum(0.0, s)


def build_null_constraints(space: SampleSpace, boundary: BoundaryFn, grid: NullGrid) -> NullConstraintSet:
    p_rows = build_p_rows(space, boundary, grid)
    inc = incidence_rows(space)
    m_d, m_c, heuristic = slack_coefficients(space, boundary, grid)
    slack = np.asarray((inc.a_d.T @ m_d - inc.a_c.T @ m_c).T)
    return NullConstraintSet(p_rows, slack, heuristic)
