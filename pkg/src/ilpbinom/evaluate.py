"""Evaluation of constructed tests: type I error profiles, power tables,
pairwise comparisons and single-trial p-value reports."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .boundary import BoundaryFn
from .classical import TESTS, berger_boos_p, fisher_p, region_from_test
from .core import Design, Outcome, Theta
from .knapsack import RegionCache, construct, default_levels, pvalue, pvalue_ladder, spec_for
from .objectives import BetaPrior, avg_power_coeffs
from .space import enumerate_space, rejection_rates

log = logging.getLogger(__name__)

KNAPSACK_TESTS = ("APK", "WAPK", "MPK", "MPK2", "SHK")


class MissingCacheError(LookupError):
    """An expensive region is neither cached nor allowed to be solved inline."""


class SolverLimitError(RuntimeError):
    def __init__(self, message, status):
        super().__init__(message)
        self.status = status


@dataclass
class TestContext:
    """Everything needed to turn a test name into a rejection region."""

    __test__ = False

    alpha: float = 0.025
    delta: float = 0.0
    gamma: float = 0.0005
    prior: Optional[BetaPrior] = None
    mpk_shift: Optional[float] = None
    observed: Optional[Outcome] = None
    grid_num: Optional[int] = None
    cache: Optional[RegionCache] = None
    abs_tol: float = 2.5e-4
    time_limit: Optional[float] = None
    node_limit: Optional[int] = None
    # solve uncached knapsack regions only up to this many outcomes
    max_inline_size: int = 2000

    def knapsack_spec(self, name: str, design: Design):
        return spec_for(
            name,
            design,
            self.alpha,
            delta=self.delta,
            prior=self.prior,
            shift=self.mpk_shift,
            observed=self.observed,
            grid_num=self.grid_num,
        )


def resolve_region(name: str, design: Design, ctx: TestContext) -> np.ndarray:
    """Rejection region of a named classical or knapsack test."""
    if name in TESTS:
        kw = {"delta": ctx.delta} if ctx.delta > 0 else {"gamma": ctx.gamma} if TESTS[name][1] == "bb" else {}
        return region_from_test(name, design, ctx.alpha, **kw).decision
    if name.upper() not in KNAPSACK_TESTS:
        raise ValueError(f"unknown test {name!r}")
    spec = ctx.knapsack_spec(name, design)
    res = None
    if ctx.cache is not None:
        res = ctx.cache.load_region(spec, ctx.abs_tol)
    if res is None:
        if design.size > ctx.max_inline_size:
            raise MissingCacheError(
                f"{name} at {design} is not cached; run `ilpbinom construct` with this configuration "
                f"(or raise max_inline_size) to build it"
            )
        res = construct(spec, ctx.abs_tol, ctx.time_limit, ctx.node_limit)
        if ctx.cache is not None and res.ok:
            ctx.cache.store_region(spec, ctx.abs_tol, res)
    if not res.ok:
        raise SolverLimitError(f"{name} at {design}: solver stopped with status {res.status}", res.status)
    return res.decision


def null_thetas(boundary: BoundaryFn, step: float = 0.001) -> np.ndarray:
    lo, hi = boundary.domain
    n = int(round((hi - lo) / step))
    t = lo + step * np.arange(n + 1)
    t = t[t <= hi + 1e-12]
    t[-1] = min(t[-1], hi)
    return t


def profile_type1(
    design: Design, regions: dict, boundary: BoundaryFn, step: float = 0.001
) -> tuple[np.ndarray, dict]:
    """Rejection rates along the null boundary, one curve per test."""
    space = enumerate_space(design)
    t = null_thetas(boundary, step)
    td = np.clip(boundary(t), 0.0, 1.0)
    return t, {name: rejection_rates(space, d, t, td) for name, d in regions.items()}


def power_table(cells: Sequence[tuple], regions_by_design: dict) -> list[dict]:
    """Power in percent for each ``(design, theta)`` cell.

    ``regions_by_design`` maps a design to ``{test: decision}``. Each row gets
    the tests attaining the row maximum and minimum (after rounding).
    """
    out = []
    for design, theta in cells:
        space = enumerate_space(design)
        regions = regions_by_design[design]
        vals = {}
        for name, d in regions.items():
            r = rejection_rates(space, d, [theta.theta_c], [theta.theta_d])[0]
            vals[name] = round(100.0 * r, 2)
        row = {"design": design, "theta": theta, "power": vals}
        if vals:
            hi, lo = max(vals.values()), min(vals.values())
            row["max"] = [k for k, v in vals.items() if v == hi]
            row["min"] = [k for k, v in vals.items() if v == lo]
        else:
            row["max"] = row["min"] = []
        out.append(row)
    return out


@dataclass(frozen=True)
class ComparisonCell:
    """``relation`` of the row test to the column test and the average power
    difference (row minus column). ``fraction`` is the share of grid points
    where the row test is strictly more powerful when neither dominates."""

    relation: str  # uniformly_le | uniformly_ge | equal | fraction
    avg_power_diff: float
    fraction: Optional[float] = None

    def label(self) -> str:
        sym = {"uniformly_le": "<=", "uniformly_ge": ">=", "equal": "="}
        head = sym[self.relation] if self.relation in sym else f"{self.fraction:.2f}"
        return f"{head} ({self.avg_power_diff:+.2f})"


def triangle_grid(step: float = 0.01) -> tuple[np.ndarray, np.ndarray]:
    """Pairs ``theta_C < theta_D`` on the ``step`` lattice of ``[0, 1]``."""
    k = int(round(1.0 / step))
    i, j = np.triu_indices(k + 1, k=1)
    return i / k, j / k


def compare_tests(design: Design, regions: dict, step: float = 0.01, tol: float = 1e-12) -> dict:
    """Pairwise comparison matrix ``{(row, col): ComparisonCell}``."""
    space = enumerate_space(design)
    tc, td = triangle_grid(step)
    coeffs = avg_power_coeffs(space)
    powers = {name: rejection_rates(space, d, tc, td) for name, d in regions.items()}
    avg = {name: float(coeffs @ np.asarray(d, dtype=float)) for name, d in regions.items()}
    out = {}
    for a in regions:
        for b in regions:
            diff = powers[a] - powers[b]
            if np.array_equal(regions[a], regions[b]) or np.all(np.abs(diff) <= tol):
                out[(a, b)] = ComparisonCell("equal", 0.0)
            elif np.all(diff <= tol):
                out[(a, b)] = ComparisonCell("uniformly_le", avg[a] - avg[b])
            elif np.all(diff >= -tol):
                out[(a, b)] = ComparisonCell("uniformly_ge", avg[a] - avg[b])
            else:
                out[(a, b)] = ComparisonCell("fraction", avg[a] - avg[b], float(np.mean(diff > tol)))
    return out


def case_study(
    design: Design,
    observed: Outcome,
    ctx: TestContext,
    tests: Sequence[str] = ("FE", "FMP*", "ZP*", "APK", "MPK", "WAPK", "MPK2", "SHK"),
    levels=None,
    solve_missing: bool = False,
) -> list[dict]:
    """p-value of each test at ``observed``.

    Classical tests are computed directly. Knapsack ladders come from the
    cache; uncached ones are solved only with ``solve_missing`` and are
    otherwise reported as pending.
    """
    rows = []
    for name in tests:
        if name == "FE":
            rows.append({"test": name, "p_value": fisher_p(design, observed), "note": ""})
        elif name in ("FMP*", "ZP*", "B*"):
            kind = TESTS[name][0]
            res = berger_boos_p(kind, design, observed, ctx.gamma)
            rows.append({"test": name, "p_value": res.p_value, "note": f"sup at theta={res.maximizing_theta:.6f}"})
        elif name.upper() in KNAPSACK_TESTS:
            spec = ctx.knapsack_spec(name, design)
            lad = None
            if ctx.cache is not None:
                lv = default_levels() if levels is None else levels
                lad = ctx.cache.load_ladder(spec, lv, ctx.abs_tol)
                if lad is None and solve_missing:
                    lad = ctx.cache.ladder(spec, lv, ctx.abs_tol, time_limit=ctx.time_limit, node_limit=ctx.node_limit)
            elif solve_missing:
                lad = pvalue_ladder(spec, levels, ctx.abs_tol, ctx.time_limit, ctx.node_limit)
            if lad is None:
                rows.append({"test": name, "p_value": None, "note": "pending (extended run)"})
            else:
                gap = float(np.nanmax(lad.gaps))
                note = f"max gap {gap:.2e}" + ("" if lad.ok else "; some levels hit a solver limit")
                rows.append({"test": name, "p_value": pvalue(lad, observed), "note": note})
        else:
            raise ValueError(f"unknown test {name!r}")
    return rows
