"""Comparator tests: Fisher, mid-p, Z (pooled/unpooled), SRLR and their
unconditional exact, Berger-Boos and estimated-p versions.

Every statistic is turned into an *extremeness score* where smaller means
more evidence for ``theta_D > g0(theta_C)``. Exact tail probabilities
``P(score <= score_obs)`` are summed over the sample space, including all
outcomes tied with the observed one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.stats import norm

from .boundary import BoundaryFn
from .core import Design, Outcome, binom_pmf_matrix, clopper_pearson, log_binom
from .space import SampleSpace, enumerate_space, is_convex

__all__ = [
    "TestStatistic",
    "UncondResult",
    "STATISTICS",
    "fisher_p",
    "fisher_midp",
    "statistic",
    "statistic_table",
    "uncond_exact_p",
    "berger_boos_p",
    "estimated_p",
    "TESTS",
    "named_test_pvalues",
    "region_from_test",
    "RegionReport",
]

STATISTICS = ("fisher_p", "fisher_midp", "z_pooled", "z_unpooled", "srlr")
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_TIE_RTOL = 1e-10


@dataclass(frozen=True)
class TestStatistic:
    kind: str
    value: float
    smaller_is_extreme: bool


@dataclass(frozen=True)
class UncondResult:
    p_value: float
    maximizing_theta: float
    method: str  # "grid_refine" or "berger_boos(<gamma>)"


# ---------------------------------------------------------------------------
# statistics over the whole sample space


def _fisher_tables(space: SampleSpace):
    """Upper hypergeometric tail and point mass of S_D given S_C + S_D, per outcome."""
    n_c, n_d = space.design.n_c, space.design.n_d
    n = n_c + n_d
    s = space.s_c + space.s_d
    log_mass = log_binom(n_c, space.s_c) + log_binom(n_d, space.s_d) - log_binom(n, s)
    mass = np.exp(log_mass)
    grid = mass.reshape(space.shape)
    tail = np.empty(space.shape)
    # for fixed total, larger s_D means smaller s_C: walk each anti-diagonal
    for tot in range(n + 1):
        sd_lo = max(0, tot - n_c)
        sd_hi = min(n_d, tot)
        sd = np.arange(sd_lo, sd_hi + 1)
        sc = tot - sd
        vals = grid[sc, sd]
        # ascending s_D within each tail sum
        acc = 0.0
        out = np.empty(sd.size)
        for k in range(sd.size - 1, -1, -1):
            acc = 0.0
            for m in range(k, sd.size):
                acc += vals[m]
            out[k] = acc
        tail[sc, sd] = np.minimum(out, 1.0)
    return tail.reshape(-1), mass


def statistic_table(kind: str, design: Design, delta: float = 0.0) -> np.ndarray:
    """Raw statistic for every outcome (row-major order)."""
    space = enumerate_space(design)
    if kind == "fisher_p":
        return _fisher_tables(space)[0]
    if kind == "fisher_midp":
        tail, mass = _fisher_tables(space)
        return tail - 0.5 * mass
    th_c = space.s_c / design.n_c
    th_d = space.s_d / design.n_d
    if kind == "z_pooled":
        pooled = (space.s_c + space.s_d) / design.n
        var = pooled * (1.0 - pooled) * (1.0 / design.n_c + 1.0 / design.n_d)
        num = th_c - th_d
        return _ratio(num, var)
    if kind == "z_unpooled":
        var = th_c * (1.0 - th_c) / design.n_c + th_d * (1.0 - th_d) / design.n_d
        num = th_c + delta - th_d
        return _ratio(num, var)
    if kind == "srlr":
        pooled = (space.s_c + space.s_d) / design.n

        def loglik(s, n, p):
            return _xlogy(s, p) + _xlogy(n - s, 1.0 - p)

        full = loglik(space.s_c, design.n_c, th_c) + loglik(space.s_d, design.n_d, th_d)
        null = loglik(space.s_c, design.n_c, pooled) + loglik(space.s_d, design.n_d, pooled)
        return np.sign(th_d - th_c) * np.sqrt(np.maximum(2.0 * (full - null), 0.0))
    raise ValueError(f"unknown statistic {kind!r}")


def _xlogy(x, y):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = x * np.log(y)
    return np.where(x == 0, 0.0, out)


def _ratio(num, var):
    # degenerate variance: num * inf with 0 * inf = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / np.sqrt(var)
    degenerate = var <= 0
    num_is_zero = np.isclose(num, 0.0, rtol=0.0, atol=1e-12)
    signed_inf = np.where(num > 0, np.inf, -np.inf)
    return np.where(degenerate, np.where(num_is_zero, 0.0, signed_inf), out)


def _score(kind: str, design: Design, delta: float = 0.0) -> np.ndarray:
    """Extremeness score: smaller is more evidence against the null."""
    raw = statistic_table(kind, design, delta)
    return -raw if kind == "srlr" else raw


def statistic(kind: str, design: Design, observed: Outcome, delta: float = 0.0) -> TestStatistic:
    if not design.contains(observed):
        raise ValueError(f"{observed} not in sample space of {design}")
    raw = statistic_table(kind, design, delta)
    i = observed.s_c * (design.n_d + 1) + observed.s_d
    return TestStatistic(kind, float(raw[i]), kind != "srlr")


def fisher_p(design: Design, observed: Outcome) -> float:
    """One-sided Fisher exact p-value ``P(S_D >= s_D | S_C + S_D = s)``."""
    return statistic("fisher_p", design, observed).value


def fisher_midp(design: Design, observed: Outcome) -> float:
    return statistic("fisher_midp", design, observed).value


# ---------------------------------------------------------------------------
# exact tail probabilities


class _TailEngine:
    """Tail probabilities ``P_theta(score <= score_i)`` for all outcomes at once."""

    def __init__(self, score: np.ndarray, design: Design, boundary: BoundaryFn):
        self.design = design
        self.boundary = boundary
        self.score = score
        order = np.argsort(score, kind="stable")
        sorted_scores = score[order]
        # tie groups in sorted order
        finite = np.isfinite(sorted_scores)
        with np.errstate(invalid="ignore"):
            gaps = np.diff(sorted_scores)
            scale = np.maximum(1.0, np.abs(sorted_scores[1:]))
            new_group = ~((gaps <= _TIE_RTOL * scale) | (sorted_scores[1:] == sorted_scores[:-1]))
        new_group &= ~(~finite[1:] & ~finite[:-1] & (sorted_scores[1:] == sorted_scores[:-1]))
        group = np.concatenate([[0], np.cumsum(new_group)])
        last_in_group = np.zeros(group[-1] + 1, dtype=np.int64)
        last_in_group[group] = np.arange(group.size)
        end = np.empty(score.size, dtype=np.int64)
        end[order] = last_in_group[group]
        self.order = order
        self.end = end

    def level_set(self, i: int) -> np.ndarray:
        """Outcomes at least as extreme as outcome ``i``."""
        mask = np.zeros(self.score.size, dtype=bool)
        mask[self.order[: self.end[i] + 1]] = True
        return mask

    def _pmf(self, thetas):
        thetas = np.asarray(thetas, dtype=float)
        pc = binom_pmf_matrix(self.design.n_c, thetas)
        pd = binom_pmf_matrix(self.design.n_d, np.clip(self.boundary(thetas), 0.0, 1.0))
        return np.einsum("ga,gb->gab", pc, pd).reshape(thetas.size, -1)

    def tails(self, thetas, cols=None, chunk=64) -> np.ndarray:
        thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
        idx = self.end if cols is None else self.end[cols]
        out = np.empty((thetas.size, idx.size))
        for k in range(0, thetas.size, chunk):
            pmf = self._pmf(thetas[k : k + chunk])[:, self.order]
            out[k : k + chunk] = np.cumsum(pmf, axis=1)[:, idx]
        return np.minimum(out, 1.0)

    def tail_of(self, i: int, thetas) -> np.ndarray:
        mask = self.level_set(i).reshape(self.design.n_c + 1, self.design.n_d + 1)
        thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
        pc = binom_pmf_matrix(self.design.n_c, thetas)
        pd = binom_pmf_matrix(self.design.n_d, np.clip(self.boundary(thetas), 0.0, 1.0))
        return np.minimum(np.einsum("gi,ij,gj->g", pc, mask.astype(float), pd), 1.0)


def _grid(lo: float, hi: float, step: float) -> np.ndarray:
    if hi < lo:
        raise ValueError(f"empty range [{lo}, {hi}]")
    if hi == lo:
        return np.array([lo])
    inner = np.arange(math.ceil(lo / step - 1e-9), math.floor(hi / step + 1e-9) + 1) * step
    inner = inner[(inner > lo) & (inner < hi)]
    return np.concatenate([[lo], inner, [hi]])


def _sup(f: Callable, lo: float, hi: float, step: float = 1e-3, tol: float = 1e-10):
    """Global max of a smooth curve on ``[lo, hi]``: grid plus golden-section
    refinement around every local maximum among grid neighbours."""
    t = _grid(lo, hi, step)
    v = f(t)
    best = int(np.argmax(v))
    best_v, best_t = float(v[best]), float(t[best])
    if t.size < 3:
        return best_v, best_t
    left = np.concatenate([[True], v[1:] >= v[:-1]])
    right = np.concatenate([v[:-1] >= v[1:], [True]])
    peaks = np.nonzero(left & right)[0]
    a = t[np.maximum(peaks - 1, 0)]
    b = t[np.minimum(peaks + 1, t.size - 1)]
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    while np.max(b - a) > tol:
        go_left = f1 >= f2
        b = np.where(go_left, x2, b)
        a = np.where(go_left, a, x1)
        nx1 = np.where(go_left, b - _GOLDEN * (b - a), x2)
        nx2 = np.where(go_left, x1, a + _GOLDEN * (b - a))
        nf1 = np.where(go_left, np.nan, f2)
        nf2 = np.where(go_left, f1, np.nan)
        need1 = np.isnan(nf1)
        need2 = np.isnan(nf2)
        if need1.any():
            nf1[need1] = f(nx1[need1])
        if need2.any():
            nf2[need2] = f(nx2[need2])
        x1, x2, f1, f2 = nx1, nx2, nf1, nf2
    for xs, fs in ((x1, f1), (x2, f2)):
        k = int(np.argmax(fs))
        if fs[k] > best_v:
            best_v, best_t = float(fs[k]), float(xs[k])
    return best_v, best_t


def _engine(kind, design, boundary=None, delta=0.0):
    if boundary is None:
        boundary = BoundaryFn.margin(delta) if delta > 0 else BoundaryFn.identity()
    return _TailEngine(_score(kind, design, delta), design, boundary)


def _index(design: Design, observed: Outcome) -> int:
    if not design.contains(observed):
        raise ValueError(f"{observed} not in sample space of {design}")
    return observed.s_c * (design.n_d + 1) + observed.s_d


def uncond_exact_p(
    kind: str,
    design: Design,
    observed: Outcome,
    theta_range: Optional[tuple] = None,
    delta: float = 0.0,
    step: float = 1e-3,
) -> UncondResult:
    """``sup_theta P_(theta, g0(theta))(score <= score_obs)`` over ``theta_range``.

    ``delta > 0`` uses the margin boundary ``g0(theta) = theta + delta``.
    """
    eng = _engine(kind, design, delta=delta)
    lo_b, hi_b = eng.boundary.domain
    lo, hi = theta_range if theta_range is not None else (lo_b, hi_b)
    if lo > hi:
        raise ValueError(f"empty theta range [{lo}, {hi}]")
    if lo < lo_b or hi > hi_b:
        raise ValueError(f"theta range [{lo}, {hi}] outside the boundary domain {eng.boundary.domain}")
    i = _index(design, observed)
    p, arg = _sup(lambda t: eng.tail_of(i, t), lo, hi, step)
    return UncondResult(min(p, 1.0), arg, "grid_refine")


def _bb_interval(design: Design, s: int, gamma: float):
    return clopper_pearson(s, design.n, 1.0 - gamma)


def berger_boos_p(kind: str, design: Design, observed: Outcome, gamma: float = 0.0005) -> UncondResult:
    """Supremum restricted to the ``1 - gamma`` Clopper-Pearson interval for the
    common rate, plus ``gamma``."""
    if not 0.0 < gamma < 0.5:
        raise ValueError(f"gamma must lie in (0, 0.5), got {gamma}")
    lo, hi = _bb_interval(design, observed.s_c + observed.s_d, gamma)
    res = uncond_exact_p(kind, design, observed, (lo, hi))
    return UncondResult(min(1.0, res.p_value + gamma), res.maximizing_theta, f"berger_boos({gamma})")


def estimated_p(kind: str, design: Design, observed: Outcome) -> float:
    """Exact tail at the pooled estimate ``(s_C + s_D) / n`` of the common rate."""
    if kind not in ("z_pooled", "srlr", "z_unpooled", "fisher_p", "fisher_midp"):
        raise ValueError(f"unknown statistic {kind!r}")
    eng = _engine(kind, design)
    i = _index(design, observed)
    pooled = (observed.s_c + observed.s_d) / design.n
    return float(eng.tail_of(i, [pooled])[0])


# ---------------------------------------------------------------------------
# named tests and rejection regions

# name -> (statistic, mode); mode is one of
#   conditional, asymptotic, bb (Berger-Boos), ux (full-range sup), estimated
TESTS = {
    "FE": ("fisher_p", "conditional"),
    "FMP": ("fisher_midp", "conditional"),
    "FMP*": ("fisher_midp", "bb"),
    "ZP*": ("z_pooled", "bb"),
    "B*": ("fisher_p", "bb"),
    "B": ("fisher_p", "ux"),
    "UX-FMP": ("fisher_midp", "ux"),
    "UX-ZP": ("z_pooled", "ux"),
    "UX-ZU": ("z_unpooled", "ux"),
    "ZU": ("z_unpooled", "asymptotic"),
    "ZP": ("z_pooled", "asymptotic"),
    "SRLR": ("srlr", "asymptotic"),
    "E-ZP": ("z_pooled", "estimated"),
    "E-SRLR": ("srlr", "estimated"),
}


def named_test_pvalues(
    name: str,
    design: Design,
    delta: float = 0.0,
    gamma: float = 0.0005,
    alpha: Optional[float] = None,
    step: float = 1e-3,
) -> np.ndarray:
    """p-values of a named test for every outcome.

    For sup-based tests the grid supremum is refined by golden section. When
    ``alpha`` is given, refinement is skipped for outcomes whose grid value
    already exceeds ``alpha`` (their rejection decision cannot change); the
    returned values for those outcomes are then grid lower bounds.
    """
    if name not in TESTS:
        raise ValueError(f"unknown test {name!r}; choose from {sorted(TESTS)}")
    kind, mode = TESTS[name]
    if delta > 0 and mode not in ("ux", "asymptotic"):
        raise ValueError(f"test {name} is only defined without a margin")
    if mode == "conditional":
        return statistic_table(kind, design)
    score = _score(kind, design, delta)
    if mode == "asymptotic":
        return norm.cdf(score)
    eng = _engine(kind, design, delta=delta)
    space = enumerate_space(design)
    if mode == "estimated":
        pooled = (space.s_c + space.s_d) / design.n
        out = np.empty(space.size)
        for s in np.unique(space.s_c + space.s_d):
            cols = np.nonzero(space.s_c + space.s_d == s)[0]
            out[cols] = eng.tails([pooled[cols[0]]], cols)[0]
        return out

    lo_b, hi_b = eng.boundary.domain
    out = np.empty(space.size)
    if mode == "ux":
        t = _grid(lo_b, hi_b, step)
        grid_p = eng.tails(t).max(axis=0)
        ranges = {i: (lo_b, hi_b) for i in range(space.size)}
        addend = 0.0
    else:
        grid_p = np.empty(space.size)
        ranges = {}
        tot = space.s_c + space.s_d
        for s in np.unique(tot):
            lo, hi = _bb_interval(design, int(s), gamma)
            cols = np.nonzero(tot == s)[0]
            grid_p[cols] = eng.tails(_grid(lo, hi, step), cols).max(axis=0)
            for i in cols:
                ranges[int(i)] = (lo, hi)
        addend = gamma
    out[:] = grid_p
    for i in range(space.size):
        if alpha is not None and grid_p[i] + addend > alpha:
            continue
        lo, hi = ranges[i]
        out[i], _ = _sup(lambda th, i=i: eng.tail_of(i, th), lo, hi, step)
    return np.minimum(out + addend, 1.0)


@dataclass
class RegionReport:
    decision: np.ndarray
    convex: bool


def region_from_test(
    test: Union[str, Callable, np.ndarray],
    design: Design,
    alpha: float,
    **kwargs,
) -> RegionReport:
    """Reject where the p-value is at most ``alpha``.

    ``test`` is a test name from :data:`TESTS`, an array of p-values in
    outcome order, or a callable ``p(design, outcome)``.
    """
    space = enumerate_space(design)
    if isinstance(test, str):
        p = named_test_pvalues(test, design, alpha=alpha, **kwargs)
    elif callable(test):
        p = np.array([test(design, space.outcome(i)) for i in range(space.size)])
    else:
        p = np.asarray(test, dtype=float)
    d = p <= alpha
    return RegionReport(d, is_convex(space, d))
