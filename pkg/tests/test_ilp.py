import numpy as np
import pytest

from ilpbinom.boundary import BoundaryFn, build_null_constraints, make_grid
from ilpbinom.core import Design, Theta
from ilpbinom.ilp import ILPModel, build_apk_model, build_mpk_model, export_mps, read_mps, solve
from ilpbinom.objectives import alt_power_rows, avg_power_coeffs
from ilpbinom.space import enumerate_space, incidence_rows, is_convex
from oracles import brute_force_best, staircase_regions


def _parts(design, num=None):
    sp = enumerate_space(design)
    b = BoundaryFn.identity()
    g = make_grid(b) if num is None else make_grid(b, num=num)
    ncs = build_null_constraints(sp, b, g)
    return sp, ncs, incidence_rows(sp)


def test_apk_model_shape_one_by_one():
    sp, ncs, inc = _parts(Design(1, 1), num=2)
    m = build_apk_model(ncs.p_rows, ncs.slack_rows, avg_power_coeffs(sp), 0.05, inc)
    assert m.rhs.size == 3  # K + (K - 1)
    pairs = {tuple(p) for p in m.precedence.tolist()}
    # index: (0,0)=0, (0,1)=1, (1,0)=2, (1,1)=3
    assert pairs == {(2, 0), (3, 1), (0, 1), (2, 3)}
    assert m.row_count == 3 + 4
    assert m.violation(np.zeros(4)) <= 0


def test_apk_model_errors():
    sp, ncs, inc = _parts(Design(2, 2), num=5)
    with pytest.raises(ValueError):
        build_apk_model(ncs.p_rows, ncs.slack_rows, np.ones(5), 0.05, inc)
    with pytest.raises(ValueError):
        build_apk_model(ncs.p_rows, ncs.slack_rows[:2], avg_power_coeffs(sp), 0.05, inc)
    with pytest.raises(ValueError):
        build_mpk_model(ncs.p_rows, ncs.slack_rows, np.zeros((0, 9)), 0.05, inc)
    with pytest.raises(ValueError):
        ILPModel(np.zeros(2), np.array([[np.inf, 0.0]]), np.array([1.0]), np.zeros((0, 2)))
    with pytest.raises(ValueError):
        ILPModel(np.zeros(2), np.zeros((0, 2)), np.zeros(0), np.array([[0, 5]]))


def test_zero_objective_gives_zero_region():
    sp, ncs, inc = _parts(Design(3, 3), num=11)
    m = build_apk_model(ncs.p_rows, ncs.slack_rows, np.zeros(sp.size), 0.05, inc)
    r = solve(m)
    assert r.ok and not r.decision.any() and r.objective_value == 0.0


def _brute_apk(sp, ncs, coeffs, alpha):
    regions = staircase_regions(sp.design.n_c, sp.design.n_d).astype(float)
    rows = np.vstack([ncs.p_rows, ncs.p_rows[:-1] + ncs.slack_rows])
    viol = (regions @ rows.T - alpha).max(axis=1)
    return regions, regions @ coeffs, viol


def test_apk_matches_enumeration_3x3():
    sp, ncs, inc = _parts(Design(3, 3))
    coeffs = avg_power_coeffs(sp)
    for alpha in (0.01, 0.025, 0.05, 0.1, 0.3):
        m = build_apk_model(ncs.p_rows, ncs.slack_rows, coeffs, alpha, inc)
        r = solve(m, abs_tol=1e-12)
        _, vals, viol = _brute_apk(sp, ncs, coeffs, alpha)
        lo, _ = brute_force_best(vals, viol, 0.0)
        hi, _ = brute_force_best(vals, viol, 1e-9)
        assert lo - 1e-12 <= r.objective_value <= hi + 1e-12
        assert is_convex(sp, r.decision)
        assert m.violation(r.decision) <= 1e-9


def test_mpk_matches_enumeration_3x3():
    sp, ncs, inc = _parts(Design(3, 3))
    alt = alt_power_rows(sp, [Theta(t, min(t + 0.5, 1.0)) for t in np.linspace(0, 0.5, 5)])
    for alpha in (0.025, 0.1):
        m = build_mpk_model(ncs.p_rows, ncs.slack_rows, alt, alpha, inc)
        r = solve(m, abs_tol=1e-12)
        regions, _, viol = _brute_apk(sp, ncs, np.zeros(sp.size), alpha)
        vals = (regions @ alt.T).min(axis=1)
        lo, _ = brute_force_best(vals, viol, 0.0)
        hi, _ = brute_force_best(vals, viol, 1e-9)
        assert lo - 1e-12 <= r.objective_value <= hi + 1e-12
        assert r.cont_value == pytest.approx(1 - r.objective_value, abs=1e-12)


def test_single_alt_point_is_linear_objective():
    sp, ncs, inc = _parts(Design(4, 4), num=101)
    alt = alt_power_rows(sp, [Theta(0.2, 0.8)])
    mpk = solve(build_mpk_model(ncs.p_rows, ncs.slack_rows, alt, 0.05, inc), abs_tol=1e-12)
    apk = solve(build_apk_model(ncs.p_rows, ncs.slack_rows, alt[0], 0.05, inc), abs_tol=1e-12)
    assert mpk.objective_value == pytest.approx(apk.objective_value, abs=1e-12)
    dup = solve(build_mpk_model(ncs.p_rows, ncs.slack_rows, np.vstack([alt, alt, alt]), 0.05, inc), abs_tol=1e-12)
    assert dup.objective_value == pytest.approx(mpk.objective_value, abs=1e-12)


def test_monotone_in_alpha_and_bounds():
    sp, ncs, inc = _parts(Design(6, 6))
    coeffs = avg_power_coeffs(sp)
    prev = -1.0
    prev_d = None
    for alpha in (0.01, 0.025, 0.05, 0.1):
        m = build_apk_model(ncs.p_rows, ncs.slack_rows, coeffs, alpha, inc)
        free = solve(m, abs_tol=1e-10)
        assert free.objective_value >= prev - 1e-10
        prev = free.objective_value
        if prev_d is not None:
            nested = solve(m, abs_tol=1e-10, extra_lower_bounds=prev_d)
            assert np.all(nested.decision >= prev_d)
        prev_d = free.decision
    m = build_apk_model(ncs.p_rows, ncs.slack_rows, coeffs, 0.05, inc)
    bad_lower = np.ones(sp.size)
    assert solve(m, extra_lower_bounds=bad_lower).status == "infeasible"
    assert solve(m, extra_lower_bounds=np.ones(sp.size), extra_upper_bounds=np.zeros(sp.size)).status == "infeasible"


def test_deterministic_repeat():
    sp, ncs, inc = _parts(Design(10, 10))
    m = build_apk_model(ncs.p_rows, ncs.slack_rows, avg_power_coeffs(sp), 0.025, inc)
    a, b = solve(m), solve(m)
    assert np.array_equal(a.decision, b.decision)
    assert a.objective_value == pytest.approx(0.38, abs=0.005)
    assert a.best_bound - a.objective_value <= 2.5e-4 + 1e-12


def test_node_limit_status():
    sp, ncs, inc = _parts(Design(25, 25), num=101)
    m = build_apk_model(ncs.p_rows, ncs.slack_rows, avg_power_coeffs(sp), 0.025, inc)
    r = solve(m, abs_tol=1e-12, node_limit=1)
    assert r.status in ("node_limit", "optimal_within_tol")
    assert m.violation(r.decision) <= 1e-9


def test_mps_round_trip(tmp_path):
    sp, ncs, inc = _parts(Design(1, 1), num=3)
    m = build_apk_model(ncs.p_rows, ncs.slack_rows, avg_power_coeffs(sp), 0.05, inc)
    path = tmp_path / "apk.mps"
    export_mps(m, path)
    text = path.read_text()
    assert "'INTORG'" in text and "'INTEND'" in text and " BV " in text
    back = read_mps(path)
    np.testing.assert_allclose(back.objective, m.objective, atol=1e-12)
    np.testing.assert_allclose(back.rows, m.rows, atol=1e-12)
    np.testing.assert_allclose(back.rhs, m.rhs, atol=1e-12)
    assert sorted(map(tuple, back.precedence.tolist())) == sorted(map(tuple, m.precedence.tolist()))


def test_mps_round_trip_maximin(tmp_path):
    sp, ncs, inc = _parts(Design(2, 3), num=4)
    alt = alt_power_rows(sp, [Theta(0.1, 0.7), Theta(0.3, 0.9)])
    m = build_mpk_model(ncs.p_rows, ncs.slack_rows, alt, 0.05, inc)
    export_mps(m, tmp_path / "mpk.mps")
    back = read_mps(tmp_path / "mpk.mps")
    assert back.cont_objective == -1.0 and back.offset == 1.0
    np.testing.assert_allclose(back.row_cont, m.row_cont)
    assert solve(back, abs_tol=1e-12).objective_value == pytest.approx(solve(m, abs_tol=1e-12).objective_value, abs=1e-12)


def test_mps_empty_constraints(tmp_path):
    m = ILPModel(np.array([1.0, 2.0]), np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2)))
    export_mps(m, tmp_path / "e.mps")
    text = (tmp_path / "e.mps").read_text()
    assert "BOUNDS" in text and "ENDATA" in text
    back = read_mps(tmp_path / "e.mps")
    np.testing.assert_array_equal(back.objective, m.objective)
    assert solve(back).objective_value == 3.0


def test_cross_solver_glpk(tmp_path):
    cvxopt = pytest.importorskip("cvxopt")
    from cvxopt import glpk

    sp, ncs, inc = _parts(Design(10, 10))
    m = build_apk_model(ncs.p_rows, ncs.slack_rows, avg_power_coeffs(sp), 0.025, inc)
    export_mps(m, tmp_path / "apk.mps")
    back = read_mps(tmp_path / "apk.mps")
    n = back.n_binary
    prec = np.zeros((len(back.precedence), n))
    prec[np.arange(len(prec)), back.precedence[:, 0]] = 1.0
    prec[np.arange(len(prec)), back.precedence[:, 1]] -= 1.0
    g = np.vstack([back.rows, prec])
    g = np.where(np.abs(g) < 1e-15, 0.0, g)
    h = np.concatenate([back.rhs, np.zeros(len(prec))])
    glpk.options["msg_lev"] = "GLP_MSG_OFF"
    status, x = glpk.ilp(cvxopt.matrix(-back.objective), cvxopt.matrix(g), cvxopt.matrix(h), B=set(range(n)))
    assert status == "optimal"
    x = np.array(x).ravel()
    assert back.objective @ x == pytest.approx(solve(m).objective_value, abs=2.5e-4)
