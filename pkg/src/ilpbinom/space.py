"""Sample space indexing, convexity and rejection rates.

Outcomes ``(s_c, s_d)`` are indexed row-major, ``index = s_c * (n_d + 1) + s_d``
(zero based). A decision vector is a boolean numpy array over these indices.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .core import Design, Outcome, Theta, binom_pmf_matrix, binom_pmf_vector


@dataclass(frozen=True)
class SampleSpace:
    design: Design
    s_c: np.ndarray = field(repr=False)
    s_d: np.ndarray = field(repr=False)
    succ_c: np.ndarray = field(repr=False)  # index of s + (1, 0), or -1
    succ_d: np.ndarray = field(repr=False)  # index of s + (0, 1), or -1

    @property
    def size(self) -> int:
        return len(self.s_c)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.design.n_c + 1, self.design.n_d + 1)

    def index(self, outcome: Outcome) -> int:
        if not self.design.contains(outcome):
            raise ValueError(f"{outcome} outside sample space of {self.design}")
        return outcome.s_c * (self.design.n_d + 1) + outcome.s_d

    def outcome(self, index: int) -> Outcome:
        if not 0 <= index < self.size:
            raise IndexError(index)
        return Outcome(int(self.s_c[index]), int(self.s_d[index]))

    def grid(self, d) -> np.ndarray:
        """View a decision vector as an ``(n_c + 1, n_d + 1)`` array."""
        return check_decision(self, d).reshape(self.shape)

    def precedence_pairs(self) -> np.ndarray:
        """Pairs ``(i, k)`` meaning ``d[k] >= d[i]`` for every in-range neighbour.

        Rejecting ``s`` forces rejection of ``s - (1, 0)`` and ``s + (0, 1)``.
        """
        idx = np.arange(self.size)
        stride = self.design.n_d + 1
        has_pred_c = self.s_c > 0
        down_c = np.column_stack([idx[has_pred_c], idx[has_pred_c] - stride])
        has_succ_d = self.succ_d >= 0
        up_d = np.column_stack([idx[has_succ_d], self.succ_d[has_succ_d]])
        pairs = np.vstack([down_c, up_d])
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        return pairs[order]


def enumerate_space(design: Design) -> SampleSpace:
    s_c, s_d = np.meshgrid(np.arange(design.n_c + 1), np.arange(design.n_d + 1), indexing="ij")
    s_c = s_c.ravel()
    s_d = s_d.ravel()
    idx = np.arange(s_c.size)
    stride = design.n_d + 1
    succ_c = np.where(s_c < design.n_c, idx + stride, -1)
    succ_d = np.where(s_d < design.n_d, idx + 1, -1)
    for arr in (s_c, s_d, succ_c, succ_d):
        arr.setflags(write=False)
    return SampleSpace(design, s_c, s_d, succ_c, succ_d)


def check_decision(space: SampleSpace, d) -> np.ndarray:
    d = np.asarray(d)
    if d.shape != (space.size,):
        raise ValueError(f"decision vector has shape {d.shape}, expected ({space.size},)")
    if d.dtype != bool:
        if not np.all((d == 0) | (d == 1)):
            raise ValueError("decision vector entries must be 0 or 1")
        d = d.astype(bool)
    return d


def is_convex(space: SampleSpace, d) -> bool:
    """Barnard's convexity: rejecting ``s`` implies rejecting ``s - (1,0)`` and ``s + (0,1)``."""
    g = space.grid(d)
    fewer_control_ok = np.all(g[:-1, :] >= g[1:, :])
    more_treated_ok = np.all(g[:, 1:] >= g[:, :-1])
    return bool(fewer_control_ok and more_treated_ok)


@dataclass(frozen=True)
class IncidenceRows:
    """Sparse difference operators acting on decision vectors.

    Row ``i`` of ``a_c`` is ``e_i - e_{s_i + (1, 0)}``, row ``i`` of ``a_d`` is
    ``e_i - e_{s_i - (0, 1)}``. Out-of-range neighbours are dropped.
    """

    a_c: sp.csr_matrix
    a_d: sp.csr_matrix
    shape: tuple = None


def incidence_rows(space: SampleSpace) -> IncidenceRows:
    m = space.size
    idx = np.arange(m)

    def build(neighbour):
        has = neighbour >= 0
        rows = np.concatenate([idx, idx[has]])
        cols = np.concatenate([idx, neighbour[has]])
        vals = np.concatenate([np.ones(m), -np.ones(int(has.sum()))])
        return sp.csr_matrix((vals, (rows, cols)), shape=(m, m))

    pred_d = np.where(space.s_d > 0, idx - 1, -1)
    return IncidenceRows(a_c=build(space.succ_c), a_d=build(pred_d), shape=space.shape)


def rejection_rate(space: SampleSpace, d, theta: Theta) -> float:
    g = space.grid(d)
    pc = binom_pmf_vector(space.design.n_c, theta.theta_c)
    pd = binom_pmf_vector(space.design.n_d, theta.theta_d)
    return float(pc @ g.astype(float) @ pd)


def rejection_rates(space: SampleSpace, d, thetas_c, thetas_d) -> np.ndarray:
    """Vectorised ``rejection_rate`` over paired parameter arrays."""
    g = space.grid(d).astype(float)
    pc = binom_pmf_matrix(space.design.n_c, thetas_c)
    pd = binom_pmf_matrix(space.design.n_d, thetas_d)
    return np.einsum("ki,ij,kj->k", pc, g, pd)


def write_decision_csv(space: SampleSpace, d, path) -> None:
    d = check_decision(space, d)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s_C", "s_D", "reject"])
        for i in range(space.size):
            w.writerow([int(space.s_c[i]), int(space.s_d[i]), int(d[i])])


def read_decision_csv(space: SampleSpace, path) -> np.ndarray:
    d = np.zeros(space.size, dtype=bool)
    seen = np.zeros(space.size, dtype=bool)
    with open(Path(path), newline="") as fh:
        for row in csv.DictReader(fh):
            i = space.index(Outcome(int(row["s_C"]), int(row["s_D"])))
            if row["reject"] not in ("0", "1"):
                raise ValueError(f"bad reject flag {row['reject']!r}")
            d[i] = row["reject"] == "1"
            seen[i] = True
    if not seen.all():
        raise ValueError(f"{path}: decision file does not cover the sample space")
    return d
