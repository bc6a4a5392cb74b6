import math

import numpy as np
import pytest

from ilpbinom.boundary import (
    BoundaryFn,
    NullGrid,
    build_null_constraints,
    build_p_rows,
    build_slack_rows,
    cardano_roots,
    hbar,
    hunder,
    kernel_cubic,
    make_grid,
    slack_coefficients,
)
from ilpbinom.core import Design, Outcome
from ilpbinom.space import enumerate_space, incidence_rows, rejection_rates
from oracles import dense_extreme, joint_pmf_grid, kernel_lower, kernel_upper, staircase_regions


def test_boundary_kinds():
    ident = BoundaryFn.identity()
    assert ident.domain == (0.0, 1.0)
    assert ident(0.3) == 0.3
    m = BoundaryFn.margin(0.2)
    assert m.domain == (0.0, 0.8)
    assert m(0.8) == 1.0
    assert m(0.1) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        BoundaryFn.margin(0.0)
    with pytest.raises(ValueError):
        BoundaryFn("custom")


def test_grids():
    g = make_grid(BoundaryFn.identity())
    assert g.size == 1001 and g.thetas[0] == 0.0 and g.thetas[-1] == 1.0
    gm = make_grid(BoundaryFn.margin(0.2))
    assert gm.size == 1000 and gm.thetas[-1] == 0.8
    with pytest.raises(ValueError):
        NullGrid(np.array([0.0, 0.5, 0.5, 1.0]))
    with pytest.raises(ValueError):
        build_p_rows(enumerate_space(Design(2, 2)), BoundaryFn.identity(), NullGrid(np.array([0.0, 0.5])))


def test_p_rows():
    sp = enumerate_space(Design(2, 2))
    g = NullGrid(np.array([0.0, 0.5, 1.0]))
    rows = build_p_rows(sp, BoundaryFn.identity(), g)
    assert rows[0, 0] == 1.0 and rows[0, 1:].sum() == 0.0
    assert rows[2, -1] == 1.0 and rows[2, :-1].sum() == 0.0
    ref = np.array([math.comb(2, a) * math.comb(2, b) / 16 for a in range(3) for b in range(3)])
    np.testing.assert_allclose(rows[1], ref, atol=1e-15)
    sp = enumerate_space(Design(7, 5))
    bm = BoundaryFn.margin(0.15)
    gm = make_grid(bm, num=50)
    rows = build_p_rows(sp, bm, gm)
    np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-10)
    for j in (0, 17, 49):
        t = gm.thetas[j]
        np.testing.assert_allclose(rows[j], joint_pmf_grid(7, 5, t, min(t + 0.15, 1.0)).reshape(-1), atol=1e-14)


def test_hbar_hunder_examples():
    b = BoundaryFn.identity()
    assert hbar(Design(2, 2), Outcome(1, 1), b, 0.4, 0.6) == pytest.approx(0.144, abs=1e-15)
    v = hunder(Design(2, 2), Outcome(1, 1), b, 0.4, 0.6)
    ref = dense_extreme(lambda t: kernel_lower(2, 2, 1, 1, 0.0, t), 0.4, 0.6, upper=False)
    assert v == pytest.approx(ref, abs=1e-12)
    # structural zeros
    assert hbar(Design(3, 3), Outcome(1, 0), b, 0.2, 0.3) == 0.0
    assert hunder(Design(3, 3), Outcome(3, 1), b, 0.2, 0.3) == 0.0
    with pytest.raises(ValueError):
        hbar(Design(3, 3), Outcome(1, 1), BoundaryFn.margin(0.2), 0.5, 0.9)


@pytest.mark.parametrize("delta", [0.0, 0.05, 0.2])
def test_hbar_hunder_dense_grid(delta):
    rng = np.random.default_rng(int(delta * 100) + 7)
    b = BoundaryFn.identity() if delta == 0 else BoundaryFn.margin(delta)
    top = 1.0 - delta
    for _ in range(300):
        n_c, n_d = rng.integers(1, 16, size=2)
        s_c, s_d = rng.integers(0, n_c + 1), rng.integers(0, n_d + 1)
        width = rng.uniform(1e-4, 2e-3)
        lo = rng.uniform(0, top - width)
        hi = lo + width
        d, o = Design(int(n_c), int(n_d)), Outcome(int(s_c), int(s_d))
        if s_d > 0:
            ref = dense_extreme(lambda t: kernel_upper(n_c, n_d, s_c, s_d, delta, t), lo, hi)
            assert abs(hbar(d, o, b, lo, hi) - ref) <= 1e-10
        if s_c < n_c:
            ref = dense_extreme(lambda t: kernel_lower(n_c, n_d, s_c, s_d, delta, t), lo, hi, upper=False)
            assert abs(hunder(d, o, b, lo, hi) - ref) <= 1e-10


def test_cardano_constructed():
    roots = sorted(cardano_roots(*np.poly([0.3, 0.5, 0.7])))
    np.testing.assert_allclose(roots, [0.3, 0.5, 0.7], atol=1e-10)
    roots = sorted(cardano_roots(*np.poly([0.5, 0.5, 0.2])))
    np.testing.assert_allclose(roots, [0.2, 0.5, 0.5], atol=1e-8)
    # leading coefficient zero: quadratic fallback
    roots = sorted(cardano_roots(0.0, 1.0, -0.7, 0.1))
    np.testing.assert_allclose(roots, [0.2, 0.5], atol=1e-12)


def test_cardano_kernel_residuals():
    coeffs = kernel_cubic((3, 3, 7, 6), 0.2)  # design (10,10), outcome (3,4), upper kernel
    scale = max(1.0, np.max(np.abs(coeffs)))
    for r in cardano_roots(*coeffs):
        if 0 < r < 0.8:
            assert abs(np.polyval(coeffs, r)) <= 1e-8 * scale
            # zero of the kernel's derivative
            h = 1e-6
            f = lambda t: kernel_upper(10, 10, 3, 4, 0.2, t)  # noqa: E731
            assert abs((f(r + h) - f(r - h)) / (2 * h)) <= 1e-6


def test_structural_zero_coefficients():
    sp = enumerate_space(Design(4, 3))
    g = make_grid(BoundaryFn.identity(), num=21)
    m_d, m_c, heur = slack_coefficients(sp, BoundaryFn.identity(), g)
    assert not heur
    assert np.all(m_d[sp.s_d == 0] == 0)
    assert np.all(m_c[sp.s_c == 4] == 0)
    assert np.all(np.isfinite(m_d)) and np.all(np.isfinite(m_c))


def test_smallest_grid():
    sp = enumerate_space(Design(2, 2))
    ncs = build_null_constraints(sp, BoundaryFn.identity(), make_grid(BoundaryFn.identity(), num=2))
    assert ncs.p_rows.shape == (2, 9)
    assert ncs.slack_rows.shape == (1, 9)
    assert np.all(np.isfinite(ncs.slack_rows))
    assert np.all(ncs.bound(np.zeros(9)) == 0)


@pytest.mark.parametrize("delta", [0.0, 0.2])
def test_lipschitz_bound_random_regions(delta):
    design = Design(3, 3)
    sp = enumerate_space(design)
    b = BoundaryFn.identity() if delta == 0 else BoundaryFn.margin(delta)
    g = make_grid(b, num=101)
    ncs = build_null_constraints(sp, b, g)
    regions = staircase_regions(3, 3)
    rng = np.random.default_rng(11)
    ds = regions[rng.choice(len(regions), 20, replace=False)].astype(float)
    bounds = np.array([ncs.bound(d) for d in ds])  # (20, K-1)
    t = g.thetas
    for j in range(t.size - 1):
        th = rng.uniform(t[j], t[j + 1], 200)
        for k, d in enumerate(ds):
            r = rejection_rates(sp, d.astype(bool), th, np.clip(b(th), 0, 1))
            assert r.max() <= bounds[k, j] + 1e-12


def test_slack_rows_with_explicit_incidence():
    sp = enumerate_space(Design(3, 2))
    b = BoundaryFn.identity()
    g = make_grid(b, num=11)
    a = build_slack_rows(sp, b, g)
    c = build_slack_rows(sp, b, g, incidence_rows(sp))
    np.testing.assert_array_equal(a, c)
