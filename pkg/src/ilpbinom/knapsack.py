"""Knapsack tests: APK, WAPK, MPK, MPK2, SHK and their p-value ladders.

A test is fixed by a :class:`KnapsackTestSpec`. :func:`construct` builds the
0-1 program of a test specification and solves it; :func:`pvalue_ladder` solves a nested
family of regions over a set of significance levels so that each outcome gets
a p-value. :class:`RegionCache` stores solved regions on disk keyed by a
content hash of everything that determines the solve.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .boundary import BoundaryFn, NullGrid, build_null_constraints, make_grid
from .classical import region_from_test
from .core import Design, Outcome, Theta, clopper_pearson
from .ilp import ILPModel, SolveResult, build_apk_model, build_mpk_model, solve
from .objectives import (
    BetaPrior,
    ObjectiveSpec,
    alt_power_rows,
    avg_power_coeffs,
    margin_avg_power_coeffs,
    weighted_avg_power_coeffs,
)
from .space import enumerate_space, incidence_rows, read_decision_csv, write_decision_csv

log = logging.getLogger(__name__)

__all__ = [
    "KnapsackTestSpec",
    "PValueLadder",
    "RegionCache",
    "construct",
    "build_model",
    "pvalue_ladder",
    "pvalue",
    "ladder_pvalues",
    "default_levels",
    "reduced_levels",
    "mpk_alternative",
    "mpk2_alternative",
    "shk_alternative",
    "MPK_SHIFTS",
    "spec_for",
]

# shift of the maximin alternative theta_D = theta_C + shift, by total sample size
MPK_SHIFTS = {20: 0.65, 50: 0.40, 100: 0.25, 300: 0.05}


@dataclass(frozen=True)
class KnapsackTestSpec:
    design: Design
    boundary: BoundaryFn
    grid: NullGrid
    objective: ObjectiveSpec
    alpha: float = 0.025

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        lo, hi = self.boundary.domain
        if self.grid.thetas[0] != lo or self.grid.thetas[-1] != hi:
            raise ValueError("null grid does not span the boundary domain")

    def with_alpha(self, alpha: float) -> "KnapsackTestSpec":
        return KnapsackTestSpec(self.design, self.boundary, self.grid, self.objective, alpha)

    def describe(self) -> dict:
        return {
            "design": [self.design.n_c, self.design.n_d],
            "boundary": self.boundary.describe(),
            "grid": {"size": self.grid.size, "digest": self.grid.digest()},
            "objective": self.objective.describe(),
            "alpha": self.alpha,
        }


def default_levels() -> np.ndarray:
    """{0.001, ..., 0.100} and {0.110, ..., 1.000}."""
    fine = np.arange(1, 101) / 1000.0
    coarse = np.arange(11, 101) / 100.0
    return np.round(np.concatenate([fine, coarse]), 3)


def reduced_levels(alpha: float = 0.025, count: int = 20) -> np.ndarray:
    """A ``count``-level subset of :func:`default_levels` containing ``alpha``.

    Levels are spread evenly in rank over the default set.
    """
    full = default_levels()
    pick = np.unique(np.round(np.linspace(0, full.size - 1, count - 1)).astype(int))
    out = np.union1d(full[pick], [alpha])
    return np.round(out, 6)


# ---------------------------------------------------------------------------
# alternative point sets


def _shift_for(design: Design) -> float:
    n = design.n
    if n in MPK_SHIFTS:
        return MPK_SHIFTS[n]
    nearest = min(MPK_SHIFTS, key=lambda k: (abs(k - n), k))
    return MPK_SHIFTS[nearest]


def mpk_alternative(design: Design, shift: Optional[float] = None, count: int = 100) -> tuple:
    """``count`` equidistant points on ``theta_D = theta_C + shift``."""
    if shift is None:
        shift = _shift_for(design)
    if not 0.0 < shift < 1.0:
        raise ValueError(f"shift must lie in (0, 1), got {shift}")
    tc = np.linspace(0.0, 1.0 - shift, count)
    td = np.minimum(tc + shift, 1.0)
    td[-1] = 1.0
    return tuple(Theta(float(a), float(b)) for a, b in zip(tc, td))


def mpk2_alternative(
    successes: int, trials: int, shift: float, level: float = 0.95, count: int = 100
) -> tuple:
    """Equidistant ``theta_C`` in the Clopper-Pearson interval for
    ``successes/trials`` (clipped to ``[0, 1 - shift]``), ``theta_D = theta_C + shift``."""
    lo, hi = clopper_pearson(successes, trials, level)
    hi = min(hi, 1.0 - shift)
    if hi < lo:
        raise ValueError("confidence interval does not meet [0, 1 - shift]")
    tc = np.linspace(lo, hi, count)
    td = np.minimum(tc + shift, 1.0)
    return tuple(Theta(float(a), float(b)) for a, b in zip(tc, td))


def shk_alternative(theta: Theta) -> tuple:
    return (theta,)


def spec_for(
    name: str,
    design: Design,
    alpha: float = 0.025,
    delta: float = 0.0,
    prior: Optional[BetaPrior] = None,
    shift: Optional[float] = None,
    observed: Optional[Outcome] = None,
    grid_num: Optional[int] = None,
) -> KnapsackTestSpec:
    """Spec of a named knapsack test (APK, WAPK, MPK, MPK2, SHK).

    MPK2 and SHK are anchored at ``observed``: SHK uses the single point of
    observed rates, MPK2 the Clopper-Pearson band for the control rate.
    ``shift`` defaults to the observed rate difference for these two and to
    :data:`MPK_SHIFTS` for MPK.
    """
    boundary = BoundaryFn.margin(delta) if delta > 0 else BoundaryFn.identity()
    grid = make_grid(boundary, num=grid_num) if grid_num else make_grid(boundary)
    name = name.upper()
    if name == "APK":
        obj = ObjectiveSpec("margin_average", delta=delta) if delta > 0 else ObjectiveSpec("average")
    elif name == "WAPK":
        if prior is None:
            raise ValueError("WAPK needs a prior")
        obj = ObjectiveSpec("weighted_average", prior=prior)
    elif name == "MPK":
        obj = ObjectiveSpec("maximin", alt_points=mpk_alternative(design, shift))
    elif name in ("MPK2", "SHK"):
        if observed is None:
            raise ValueError(f"{name} needs an observed outcome")
        rate_c = observed.s_c / design.n_c
        rate_d = observed.s_d / design.n_d
        if shift is None:
            shift = rate_d - rate_c
        if name == "SHK":
            pts = shk_alternative(Theta(rate_c, rate_d))
        else:
            pts = mpk2_alternative(observed.s_c, design.n_c, shift)
        obj = ObjectiveSpec("maximin", alt_points=pts)
    else:
        raise ValueError(f"unknown knapsack test {name!r}")
    return KnapsackTestSpec(design, boundary, grid, obj, alpha)


# ---------------------------------------------------------------------------
# model construction


@lru_cache(maxsize=8)
def _null_rows(design: Design, boundary: BoundaryFn, grid_digest: str, thetas: tuple):
    space = enumerate_space(design)
    ncs = build_null_constraints(space, boundary, NullGrid(np.array(thetas)))
    if ncs.heuristic:
        log.warning("slack rows for %s use sampled extremes; exactness is not guaranteed", boundary.describe())
    return space, incidence_rows(space), ncs


def _rows_for(spec: KnapsackTestSpec):
    return _null_rows(spec.design, spec.boundary, spec.grid.digest(), tuple(spec.grid.thetas.tolist()))


def objective_vector(spec: KnapsackTestSpec, space=None) -> np.ndarray:
    """Linear objective coefficients of an average-type spec."""
    if space is None:
        space = enumerate_space(spec.design)
    obj = spec.objective
    if obj.kind == "average":
        return avg_power_coeffs(space)
    if obj.kind == "weighted_average":
        return weighted_avg_power_coeffs(space, obj.prior)
    if obj.kind == "margin_average":
        return margin_avg_power_coeffs(space, obj.delta)
    raise ValueError(f"objective {obj.kind!r} has no coefficient vector")


def build_model(spec: KnapsackTestSpec) -> ILPModel:
    space, inc, ncs = _rows_for(spec)
    if spec.objective.kind == "maximin":
        alt = alt_power_rows(space, spec.objective.alt_points)
        return build_mpk_model(ncs.p_rows, ncs.slack_rows, alt, spec.alpha, inc)
    return build_apk_model(ncs.p_rows, ncs.slack_rows, objective_vector(spec, space), spec.alpha, inc)


def _fisher_start(spec: KnapsackTestSpec, model: ILPModel, lower=None, upper=None):
    if spec.boundary.kind != "identity":
        return None
    d = region_from_test("FE", spec.design, spec.alpha).decision
    if lower is not None and np.any(d < lower):
        return None
    if upper is not None and np.any(d > upper):
        return None
    beta = model.best_cont(d) if model.has_cont else 0.0
    return d if model.violation(d, beta) <= 0.0 else None


def construct(
    spec: KnapsackTestSpec,
    abs_tol: float = 2.5e-4,
    time_limit: Optional[float] = None,
    node_limit: Optional[int] = None,
    lower=None,
    upper=None,
    warm_start: bool = True,
) -> SolveResult:
    """Build and solve the program of ``spec``.

    The Fisher exact region at the same level seeds the incumbent when it is
    feasible. ``lower``/``upper`` restrict the decision elementwise.
    """
    model = build_model(spec)
    start = _fisher_start(spec, model, lower, upper) if warm_start else None
    return solve(
        model,
        abs_tol=abs_tol,
        extra_lower_bounds=lower,
        extra_upper_bounds=upper,
        time_limit=time_limit,
        node_limit=node_limit,
        start=start,
    )


# ---------------------------------------------------------------------------
# p-value ladder


@dataclass
class PValueLadder:
    design: Design
    levels: np.ndarray
    regions: np.ndarray  # (len(levels), |S|) bool, nondecreasing down the rows
    objective_values: np.ndarray
    gaps: np.ndarray
    statuses: list = field(default_factory=list)

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=float)
        self.regions = np.asarray(self.regions, dtype=bool)
        if np.any(np.diff(self.levels) <= 0):
            raise ValueError("ladder levels must be strictly increasing")
        if self.regions.shape[0] != self.levels.size:
            raise ValueError("one region per level expected")

    @property
    def nested(self) -> bool:
        return bool(np.all(self.regions[1:] >= self.regions[:-1]))

    def region(self, level: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.levels - level)))
        if not math.isclose(self.levels[k], level, abs_tol=1e-12):
            raise KeyError(f"level {level} not in ladder")
        return self.regions[k]

    @property
    def ok(self) -> bool:
        return all(s == "optimal_within_tol" for s in self.statuses)


def pvalue_ladder(
    spec: KnapsackTestSpec,
    levels: Optional[Sequence[float]] = None,
    abs_tol: float = 2.5e-4,
    time_limit: Optional[float] = None,
    node_limit: Optional[int] = None,
    progress=None,
) -> PValueLadder:
    """Nested regions over ``levels``; the anchor is ``spec.alpha``.

    Levels above the anchor are solved in ascending order with the previous
    region as a lower bound, those below in descending order with the previous
    region as an upper bound.
    """
    levels = default_levels() if levels is None else np.asarray(sorted(set(float(v) for v in levels)))
    anchor = int(np.argmin(np.abs(levels - spec.alpha)))
    if not math.isclose(levels[anchor], spec.alpha, abs_tol=1e-12):
        raise ValueError(f"anchor level {spec.alpha} must be among the ladder levels")
    m = spec.design.size
    regions = np.zeros((levels.size, m), dtype=bool)
    values = np.full(levels.size, np.nan)
    gaps = np.full(levels.size, np.nan)
    statuses = [""] * levels.size

    def run(k, lower=None, upper=None):
        if levels[k] >= 1.0:
            # every region has size at most 1
            regions[k] = True
            values[k] = float(build_model(spec).value(np.ones(m))) if spec.objective.kind != "maximin" else 1.0
            gaps[k] = 0.0
            statuses[k] = "optimal_within_tol"
            return
        res = construct(spec.with_alpha(float(levels[k])), abs_tol, time_limit, node_limit, lower, upper)
        regions[k] = res.decision
        values[k] = res.objective_value
        gaps[k] = res.abs_gap
        statuses[k] = res.status
        if progress is not None:
            progress(float(levels[k]), res)
        if res.status == "infeasible":
            raise RuntimeError(f"ladder level {levels[k]} is infeasible")

    run(anchor)
    for k in range(anchor + 1, levels.size):
        run(k, lower=regions[k - 1])
    for k in range(anchor - 1, -1, -1):
        run(k, upper=regions[k + 1])
    return PValueLadder(spec.design, levels, regions, values, gaps, statuses)


def pvalue(ladder: PValueLadder, observed: Outcome) -> float:
    """Smallest level whose region rejects ``observed``; 1.0 if none does."""
    if not ladder.design.contains(observed):
        raise ValueError(f"{observed} outside sample space of {ladder.design}")
    i = observed.s_c * (ladder.design.n_d + 1) + observed.s_d
    hits = np.nonzero(ladder.regions[:, i])[0]
    return float(ladder.levels[hits[0]]) if hits.size else 1.0


def ladder_pvalues(ladder: PValueLadder) -> np.ndarray:
    """p-values of every outcome, in outcome order."""
    hit = ladder.regions.any(axis=0)
    first = np.argmax(ladder.regions, axis=0)
    return np.where(hit, ladder.levels[first], 1.0)


# ---------------------------------------------------------------------------
# on-disk cache


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class RegionCache:
    """Solved regions and ladders stored as decision CSVs plus JSON manifests."""

    def __init__(self, root):
        self.root = Path(root)

    @staticmethod
    def key(spec: KnapsackTestSpec, abs_tol: float, levels=None) -> str:
        payload = spec.describe()
        payload["abs_tol"] = abs_tol
        if levels is not None:
            payload["levels"] = [float(v) for v in levels]
        return hashlib.sha256(_canonical(payload).encode()).hexdigest()[:20]

    def _paths(self, key):
        return self.root / f"{key}.csv", self.root / f"{key}.json"

    def load_region(self, spec: KnapsackTestSpec, abs_tol: float):
        csv_path, man_path = self._paths(self.key(spec, abs_tol))
        if not (csv_path.exists() and man_path.exists()):
            return None
        man = json.loads(man_path.read_text())
        d = read_decision_csv(enumerate_space(spec.design), csv_path)
        return SolveResult(d, man["objective_value"], man["best_bound"], man["abs_gap"], man["status"])

    def store_region(self, spec: KnapsackTestSpec, abs_tol: float, res: SolveResult) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        csv_path, man_path = self._paths(self.key(spec, abs_tol))
        write_decision_csv(enumerate_space(spec.design), res.decision, csv_path)
        man = spec.describe()
        man.update(
            abs_tol=abs_tol,
            objective_value=res.objective_value,
            best_bound=res.best_bound,
            abs_gap=res.abs_gap,
            status=res.status,
        )
        man_path.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
        return csv_path

    def region(self, spec: KnapsackTestSpec, abs_tol: float = 2.5e-4, **solve_kw) -> SolveResult:
        hit = self.load_region(spec, abs_tol)
        if hit is not None:
            return hit
        res = construct(spec, abs_tol, **solve_kw)
        if res.ok:
            self.store_region(spec, abs_tol, res)
        return res

    def load_ladder(self, spec: KnapsackTestSpec, levels, abs_tol: float):
        key = self.key(spec, abs_tol, levels)
        csv_path, man_path = self._paths(key)
        if not (csv_path.exists() and man_path.exists()):
            return None
        man = json.loads(man_path.read_text())
        space = enumerate_space(spec.design)
        p = np.ones(space.size)
        with open(csv_path, newline="") as fh:
            for row in csv.DictReader(fh):
                p[space.index(Outcome(int(row["s_C"]), int(row["s_D"])))] = float(row["p_value"])
        lv = np.asarray(man["levels"], dtype=float)
        regions = p[None, :] <= lv[:, None] + 1e-12
        return PValueLadder(
            spec.design, lv, regions, np.asarray(man["objective_values"]), np.asarray(man["gaps"]), man["statuses"]
        )

    def store_ladder(self, spec: KnapsackTestSpec, abs_tol: float, ladder: PValueLadder) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        csv_path, man_path = self._paths(self.key(spec, abs_tol, ladder.levels))
        space = enumerate_space(spec.design)
        p = ladder_pvalues(ladder)
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s_C", "s_D", "p_value"])
            for i in range(space.size):
                w.writerow([int(space.s_c[i]), int(space.s_d[i]), repr(float(p[i]))])
        man = spec.describe()
        man.update(
            abs_tol=abs_tol,
            levels=[float(v) for v in ladder.levels],
            objective_values=[float(v) for v in ladder.objective_values],
            gaps=[float(v) for v in ladder.gaps],
            statuses=list(ladder.statuses),
        )
        man_path.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
        return csv_path

    def ladder(self, spec: KnapsackTestSpec, levels=None, abs_tol: float = 2.5e-4, **solve_kw) -> PValueLadder:
        levels = default_levels() if levels is None else np.asarray(sorted(set(float(v) for v in levels)))
        hit = self.load_ladder(spec, levels, abs_tol)
        if hit is not None:
            return hit
        lad = pvalue_ladder(spec, levels, abs_tol, **solve_kw)
        if lad.ok:
            self.store_ladder(spec, abs_tol, lad)
        return lad
