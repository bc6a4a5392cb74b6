"""Exact one-sided tests for two binomial proportions, including
power-maximising tests built as 0-1 knapsack programs."""

from .boundary import BoundaryFn, NullGrid, build_null_constraints, hbar, hunder, make_grid
from .classical import berger_boos_p, fisher_midp, fisher_p, region_from_test, uncond_exact_p
from .core import Design, Outcome, Theta, clopper_pearson
from .ilp import ILPModel, SolveResult, export_mps, read_mps, solve
from .knapsack import KnapsackTestSpec, PValueLadder, construct, pvalue, pvalue_ladder, spec_for
from .objectives import BetaPrior, ObjectiveSpec, avg_power_coeffs, margin_avg_power_coeffs, weighted_avg_power_coeffs
from .space import SampleSpace, enumerate_space, is_convex, rejection_rate

__version__ = "0.1.0"
