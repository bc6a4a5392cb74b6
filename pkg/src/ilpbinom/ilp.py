"""0-1 programs for knapsack tests and their solution.

Models keep the type I error rows, the convexity (precedence) pairs and an
optional single continuous variable used by the maximin objective. Solving
is delegated to HiGHS; every returned decision is re-checked in double
precision against the full, unsparsified rows.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .space import IncidenceRows

log = logging.getLogger(__name__)

__all__ = [
    "ILPModel",
    "SolveResult",
    "build_apk_model",
    "build_mpk_model",
    "precedence_from_incidence",
    "solve",
    "export_mps",
    "read_mps",
    "FEAS_SLACK",
]

# slack allowed when re-checking a returned decision
FEAS_SLACK = 1e-9
# coefficients below this magnitude are not passed to the solver
_DROP = 1e-15


@dataclass
class ILPModel:
    """``max objective . d + cont_objective * beta + offset``.

    ``rows @ d + row_cont * beta <= rhs``; ``d[k] >= d[i]`` for every
    precedence pair ``(i, k)``; ``d`` binary, ``beta`` continuous in
    ``cont_bounds`` when ``cont_objective`` is not None.
    """

    objective: np.ndarray
    rows: np.ndarray
    rhs: np.ndarray
    precedence: np.ndarray
    row_names: list = field(default_factory=list)
    row_cont: Optional[np.ndarray] = None
    cont_objective: Optional[float] = None
    cont_bounds: tuple = (0.0, 1.0)
    offset: float = 0.0
    grid_shape: Optional[tuple] = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        self.rows = np.asarray(self.rows, dtype=float).reshape(-1, self.objective.size)
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.precedence = np.asarray(self.precedence, dtype=np.int64).reshape(-1, 2)
        if self.rows.shape[0] != self.rhs.size:
            raise ValueError("row count and rhs length differ")
        if not (np.all(np.isfinite(self.rows)) and np.all(np.isfinite(self.rhs))):
            raise ValueError("constraint rows must be finite")
        if self.precedence.size and (self.precedence.min() < 0 or self.precedence.max() >= self.n_binary):
            raise ValueError("precedence pair references an invalid index")
        if self.row_cont is not None:
            self.row_cont = np.asarray(self.row_cont, dtype=float)
            if self.row_cont.size != self.rhs.size:
                raise ValueError("row_cont length differs from row count")
        if not self.row_names:
            self.row_names = [f"R{j + 1}" for j in range(self.rhs.size)]

    @property
    def n_binary(self) -> int:
        return self.objective.size

    @property
    def has_cont(self) -> bool:
        return self.cont_objective is not None

    @property
    def row_count(self) -> int:
        return self.rhs.size + len(self.precedence)

    def violation(self, d, beta: float = 0.0) -> float:
        """Largest violation of any row or precedence pair by ``(d, beta)``."""
        d = np.asarray(d, dtype=float)
        worst = 0.0
        if self.rhs.size:
            act = self.rows @ d
            if self.row_cont is not None:
                act = act + self.row_cont * beta
            worst = max(worst, float(np.max(act - self.rhs)))
        if len(self.precedence):
            worst = max(worst, float(np.max(d[self.precedence[:, 0]] - d[self.precedence[:, 1]])))
        return worst

    def value(self, d, beta: float = 0.0) -> float:
        v = float(self.objective @ np.asarray(d, dtype=float)) + self.offset
        if self.has_cont:
            v += self.cont_objective * beta
        return v

    def best_cont(self, d) -> float:
        """Optimal continuous value for fixed binaries (maximin models)."""
        lo, hi = self.cont_bounds
        if self.row_cont is None:
            return lo
        act = self.rows @ np.asarray(d, dtype=float)
        beta = lo if self.cont_objective < 0 else hi
        for a, c, r in zip(act, self.row_cont, self.rhs):
            if c < 0:
                beta = max(beta, (a - r) / -c)
            elif c > 0:
                beta = min(beta, (r - a) / c)
        return float(min(max(beta, lo), hi))


@dataclass
class SolveResult:
    decision: np.ndarray
    objective_value: float
    best_bound: float
    abs_gap: float
    status: str  # optimal_within_tol | infeasible | node_limit | time_limit
    cont_value: Optional[float] = None

    @property
    def ok(self) -> bool:
        return self.status == "optimal_within_tol"


def precedence_from_incidence(inc: IncidenceRows) -> np.ndarray:
    """Precedence pairs ``(i, k)`` (``d[k] >= d[i]``) read off the incidence rows."""
    pairs = []
    for mat in (inc.a_c, inc.a_d):
        coo = mat.tocoo()
        off = coo.data < 0
        r, c = coo.row[off], coo.col[off]
        # a_c row i: e_i - e_{s+(1,0)}  -> rejecting s+(1,0) forces s
        # a_d row i: e_i - e_{s-(0,1)}  -> rejecting s-(0,1) forces s
        pairs.append(np.column_stack([c, r]))
    out = np.vstack(pairs) if pairs else np.zeros((0, 2), dtype=np.int64)
    order = np.lexsort((out[:, 1], out[:, 0]))
    return out[order].astype(np.int64)


def _type1_rows(p_rows, slack_rows, alpha):
    p_rows = np.asarray(p_rows, dtype=float)
    slack_rows = np.asarray(slack_rows, dtype=float)
    k = p_rows.shape[0]
    if slack_rows.shape[0] not in (k - 1, 0) or (slack_rows.size and slack_rows.shape[1] != p_rows.shape[1]):
        raise ValueError(f"slack rows {slack_rows.shape} do not match p rows {p_rows.shape}")
    rows = np.vstack([p_rows, p_rows[: slack_rows.shape[0]] + slack_rows])
    names = [f"P{j + 1}" for j in range(k)] + [f"L{j + 1}" for j in range(slack_rows.shape[0])]
    return rows, np.full(rows.shape[0], float(alpha)), names


def build_apk_model(p_rows, slack_rows, objective_coeffs, alpha: float, inc: IncidenceRows) -> ILPModel:
    """Maximise a linear power objective subject to the type I error rows and convexity."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    objective_coeffs = np.asarray(objective_coeffs, dtype=float)
    if objective_coeffs.size != np.asarray(p_rows).shape[1]:
        raise ValueError("objective length does not match the sample space")
    rows, rhs, names = _type1_rows(p_rows, slack_rows, alpha)
    return ILPModel(objective_coeffs, rows, rhs, precedence_from_incidence(inc), names, grid_shape=inc.shape)


def build_mpk_model(p_rows, slack_rows, alt_rows, alpha: float, inc: IncidenceRows) -> ILPModel:
    """Maximise ``1 - beta`` with ``1 - p_alt . d <= beta`` for each alternative row."""
    alt_rows = np.atleast_2d(np.asarray(alt_rows, dtype=float))
    if alt_rows.shape[0] == 0 or alt_rows.size == 0:
        raise ValueError("maximin model needs at least one alternative row")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    rows, rhs, names = _type1_rows(p_rows, slack_rows, alpha)
    n_t1 = rows.shape[0]
    rows = np.vstack([rows, -alt_rows])
    rhs = np.concatenate([rhs, -np.ones(alt_rows.shape[0])])
    names = names + [f"A{j + 1}" for j in range(alt_rows.shape[0])]
    row_cont = np.concatenate([np.zeros(n_t1), -np.ones(alt_rows.shape[0])])
    return ILPModel(
        np.zeros(alt_rows.shape[1]),
        rows,
        rhs,
        precedence_from_incidence(inc),
        names,
        row_cont=row_cont,
        cont_objective=-1.0,
        cont_bounds=(0.0, 1.0),
        offset=1.0,
        grid_shape=inc.shape,
    )


def _forced_zero(model: ILPModel) -> np.ndarray:
    """Binaries that cannot be 1 because their forced up-set alone breaks a row.

    Only nonnegative rows qualify. On the outcome grid, rejecting
    ``(s_c, s_d)`` forces every ``(s_c', s_d')`` with ``s_c' <= s_c`` and
    ``s_d' >= s_d``, so the forced mass is a quadrant sum.
    """
    n = model.n_binary
    if model.grid_shape is None:
        return np.zeros(n, dtype=bool)
    nonneg = np.all(model.rows >= 0, axis=1)
    if model.row_cont is not None:
        nonneg &= model.row_cont == 0
    if not nonneg.any():
        return np.zeros(n, dtype=bool)
    rows = model.rows[nonneg].reshape(-1, *model.grid_shape)
    quad = np.cumsum(rows, axis=1)
    quad = np.flip(np.cumsum(np.flip(quad, axis=2), axis=2), axis=2)
    over = quad > model.rhs[nonneg][:, None, None] + 1e-12
    return over.any(axis=0).reshape(-1)


def _highs_status(h, model_status):
    import highspy

    s = highspy.HighsModelStatus
    if model_status == s.kOptimal:
        return "optimal_within_tol"
    if model_status in (s.kInfeasible, s.kUnboundedOrInfeasible):
        return "infeasible"
    if model_status == s.kTimeLimit:
        return "time_limit"
    return "node_limit"


def solve(
    model: ILPModel,
    abs_tol: float = 2.5e-4,
    extra_lower_bounds=None,
    extra_upper_bounds=None,
    time_limit: Optional[float] = None,
    node_limit: Optional[int] = None,
    start=None,
) -> SolveResult:
    """Solve to an absolute optimality gap of ``abs_tol``.

    ``extra_lower_bounds``/``extra_upper_bounds`` are 0/1 vectors imposing
    ``lower <= d <= upper`` elementwise. ``start`` is an optional feasible
    decision used as the initial incumbent.
    """
    import highspy

    n = model.n_binary
    lower = np.zeros(n)
    upper = np.ones(n)
    if extra_lower_bounds is not None:
        lower = np.maximum(lower, np.asarray(extra_lower_bounds, dtype=float))
    if extra_upper_bounds is not None:
        upper = np.minimum(upper, np.asarray(extra_upper_bounds, dtype=float))
    if np.any(lower > upper):
        return SolveResult(np.zeros(n, dtype=bool), -math.inf, -math.inf, math.inf, "infeasible")

    forced = _forced_zero(model)
    if np.any(forced & (lower > 0)):
        return SolveResult(np.zeros(n, dtype=bool), -math.inf, -math.inf, math.inf, "infeasible")
    upper = np.where(forced, 0.0, upper)

    if not model.has_cont and not np.any(model.objective) and extra_lower_bounds is None:
        d = np.zeros(n, dtype=bool)
        if model.violation(d) <= FEAS_SLACK:
            v = model.value(d)
            return SolveResult(d, v, v, 0.0, "optimal_within_tol")

    tighten = 0.0
    for _attempt in range(4):
        d, beta, bound, status = _run_highs(model, lower, upper, abs_tol, time_limit, node_limit, start, tighten)
        if d is None:
            return SolveResult(np.zeros(n, dtype=bool), -math.inf, bound, math.inf, status)
        if model.has_cont:
            beta = model.best_cont(d)
        viol = model.violation(d, beta)
        if viol <= FEAS_SLACK:
            value = model.value(d, beta)
            bound = max(bound, value)
            gap = bound - value
            return SolveResult(d, value, bound, gap, status, beta if model.has_cont else None)
        log.warning("solver returned a decision violating a row by %.3g; tightening rhs", viol)
        tighten = tighten + 2.0 * viol
    raise RuntimeError("could not obtain a decision satisfying all rows")


def _run_highs(model, lower, upper, abs_tol, time_limit, node_limit, start, tighten):
    import highspy

    n = model.n_binary
    nc = n + (1 if model.has_cont else 0)
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("threads", 1)
    h.setOptionValue("random_seed", 0)
    h.setOptionValue("mip_abs_gap", max(float(abs_tol), 1e-12))
    h.setOptionValue("mip_rel_gap", 0.0)
    h.setOptionValue("mip_feasibility_tolerance", 1e-10)
    h.setOptionValue("primal_feasibility_tolerance", 1e-10)
    if time_limit is not None:
        h.setOptionValue("time_limit", float(time_limit))
    if node_limit is not None:
        h.setOptionValue("mip_max_nodes", int(node_limit))

    rows = np.where(np.abs(model.rows) <= _DROP, 0.0, model.rows)
    blocks = [sp.csr_matrix(rows)]
    if model.has_cont:
        blocks = [sp.hstack([blocks[0], sp.csr_matrix(model.row_cont.reshape(-1, 1))])]
    m1 = model.rhs.size
    prec = model.precedence
    if len(prec):
        npair = len(prec)
        pr = sp.csr_matrix(
            (
                np.concatenate([np.ones(npair), -np.ones(npair)]),
                (np.concatenate([np.arange(npair)] * 2), np.concatenate([prec[:, 1], prec[:, 0]])),
            ),
            shape=(npair, nc),
        )
        blocks.append(pr)
    a = sp.vstack(blocks).tocsc() if blocks else sp.csc_matrix((0, nc))
    row_lo = np.concatenate([np.full(m1, -highspy.kHighsInf), np.zeros(len(prec))])
    row_hi = np.concatenate([model.rhs - tighten, np.full(len(prec), highspy.kHighsInf)])

    lp = highspy.HighsLp()
    lp.num_col_ = nc
    lp.num_row_ = a.shape[0]
    cost = model.objective
    col_lo, col_hi = lower, upper
    if model.has_cont:
        cost = np.append(cost, model.cont_objective)
        col_lo = np.append(col_lo, model.cont_bounds[0])
        col_hi = np.append(col_hi, model.cont_bounds[1])
    lp.col_cost_ = np.asarray(cost, dtype=float)
    lp.col_lower_ = np.asarray(col_lo, dtype=float)
    lp.col_upper_ = np.asarray(col_hi, dtype=float)
    lp.row_lower_ = row_lo
    lp.row_upper_ = row_hi
    lp.sense_ = highspy.ObjSense.kMaximize
    lp.offset_ = model.offset
    lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
    lp.a_matrix_.start_ = a.indptr.astype(np.int32)
    lp.a_matrix_.index_ = a.indices.astype(np.int32)
    lp.a_matrix_.value_ = a.data.astype(float)
    integ = [highspy.HighsVarType.kInteger] * n
    if model.has_cont:
        integ.append(highspy.HighsVarType.kContinuous)
    lp.integrality_ = integ
    h.passModel(lp)
    if start is not None:
        x0 = np.asarray(start, dtype=float)
        if model.has_cont:
            x0 = np.append(x0, model.best_cont(x0))
        sol = highspy.HighsSolution()
        sol.col_value = list(x0)
        sol.value_valid = True
        h.setSolution(sol)
    h.run()
    status = _highs_status(h, h.getModelStatus())
    info = h.getInfo()
    bound = float(info.mip_dual_bound) if math.isfinite(info.mip_dual_bound) else math.inf
    if status == "infeasible" or info.primal_solution_status == 0:
        return None, None, bound, status
    x = np.asarray(h.getSolution().col_value)
    d = x[:n] > 0.5
    beta = float(x[n]) if model.has_cont else 0.0
    return d, beta, bound, status


# ---------------------------------------------------------------------------
# MPS


def _fmt(v: float) -> str:
    return repr(float(v))


def export_mps(model: ILPModel, path) -> None:
    """Fixed-layout MPS with binaries between INTORG/INTEND markers.

    Columns are ``d1..dN`` (plus ``c1`` for the continuous variable); numbers
    are written at full precision so the file round-trips exactly.
    """
    n = model.n_binary
    lines = ["NAME          KNAPSACK", "OBJSENSE", "    MAX", "ROWS", " N  OBJ"]
    for name in model.row_names:
        lines.append(f" L  {name}")
    prec_names = [f"C{k + 1}" for k in range(len(model.precedence))]
    for name in prec_names:
        lines.append(f" G  {name}")
    # column-wise entries
    col_entries = [[] for _ in range(n)]
    for j in range(n):
        if model.objective[j] != 0.0:
            col_entries[j].append(("OBJ", model.objective[j]))
    nz_r, nz_c = np.nonzero(model.rows)
    for r, c in zip(nz_r, nz_c):
        col_entries[c].append((model.row_names[r], model.rows[r, c]))
    for k, (i, kk) in enumerate(model.precedence):
        col_entries[kk].append((prec_names[k], 1.0))
        col_entries[i].append((prec_names[k], -1.0))
    lines.append("COLUMNS")
    lines.append("    MARKER                 'MARKER'                 'INTORG'")
    for j in range(n):
        name = f"d{j + 1}"
        if not col_entries[j]:
            lines.append(f"    {name:<8}  {'OBJ':<8}  {_fmt(0.0)}")
        for row, val in col_entries[j]:
            lines.append(f"    {name:<8}  {row:<8}  {_fmt(val)}")
    lines.append("    MARKER                 'MARKER'                 'INTEND'")
    if model.has_cont:
        lines.append(f"    {'c1':<8}  {'OBJ':<8}  {_fmt(model.cont_objective)}")
        for r in np.nonzero(model.row_cont)[0]:
            lines.append(f"    {'c1':<8}  {model.row_names[r]:<8}  {_fmt(model.row_cont[r])}")
    lines.append("RHS")
    if model.offset != 0.0:
        lines.append(f"    {'RHS':<8}  {'OBJ':<8}  {_fmt(-model.offset)}")
    for name, r in zip(model.row_names, model.rhs):
        if r != 0.0:
            lines.append(f"    {'RHS':<8}  {name:<8}  {_fmt(r)}")
    lines.append("BOUNDS")
    for j in range(n):
        lines.append(f" BV {'BND':<8}  {'d' + str(j + 1):<8}")
    if model.has_cont:
        lo, hi = model.cont_bounds
        lines.append(f" LO {'BND':<8}  {'c1':<8}  {_fmt(lo)}")
        lines.append(f" UP {'BND':<8}  {'c1':<8}  {_fmt(hi)}")
    lines.append("ENDATA")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mps(path) -> ILPModel:
    """Parse a file written by :func:`export_mps` back into a model."""
    section = None
    le_rows, ge_rows = [], []
    cols: dict = {}
    col_order: list = []
    rhs: dict = {}
    bounds: dict = {}
    sense_max = False
    with open(path) as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if not line.startswith(" "):
                section = line.split()[0]
                continue
            f = line.split()
            if section == "OBJSENSE":
                sense_max = f[0] == "MAX"
            elif section == "ROWS":
                if f[0] == "L":
                    le_rows.append(f[1])
                elif f[0] == "G":
                    ge_rows.append(f[1])
            elif section == "COLUMNS":
                if len(f) > 1 and f[1] == "'MARKER'":
                    continue
                if f[0] not in cols:
                    cols[f[0]] = {}
                    col_order.append(f[0])
                for k in range(1, len(f) - 1, 2):
                    cols[f[0]][f[k]] = float(f[k + 1])
            elif section == "RHS":
                for k in range(1, len(f) - 1, 2):
                    rhs[f[k]] = float(f[k + 1])
            elif section == "BOUNDS":
                bounds.setdefault(f[2], {})[f[0]] = float(f[3]) if len(f) > 3 else None
    if not sense_max:
        raise ValueError("expected a maximisation model")
    bin_cols = [c for c in col_order if c.startswith("d")]
    cont_cols = [c for c in col_order if not c.startswith("d")]
    n = len(bin_cols)
    obj = np.array([cols[c].get("OBJ", 0.0) for c in bin_cols])
    rows = np.zeros((len(le_rows), n))
    rindex = {r: k for k, r in enumerate(le_rows)}
    for j, c in enumerate(bin_cols):
        for r, v in cols[c].items():
            if r in rindex:
                rows[rindex[r], j] = v
    pairs = {}
    for j, c in enumerate(bin_cols):
        for r, v in cols[c].items():
            if r.startswith("C"):
                pairs.setdefault(r, [None, None])[0 if v < 0 else 1] = j
    prec = np.array([pairs[r] for r in ge_rows], dtype=np.int64).reshape(-1, 2)
    kw = {}
    if cont_cols:
        c = cont_cols[0]
        kw["cont_objective"] = cols[c].get("OBJ", 0.0)
        kw["row_cont"] = np.array([cols[c].get(r, 0.0) for r in le_rows])
        b = bounds.get(c, {})
        kw["cont_bounds"] = (b.get("LO", 0.0), b.get("UP", math.inf))
    return ILPModel(
        obj,
        rows,
        np.array([rhs.get(r, 0.0) for r in le_rows]),
        prec,
        list(le_rows),
        offset=-rhs.get("OBJ", 0.0),
        **kw,
    )
