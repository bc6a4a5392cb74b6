import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from ilpbinom.core import (
    Design,
    Outcome,
    Theta,
    beta_quantile,
    binom_pmf,
    binom_pmf_matrix,
    binom_pmf_vector,
    clopper_pearson,
    joint_pmf,
    log_beta,
    reg_inc_beta,
)
from oracles import exact_binom_pmf


def test_design_and_theta_validation():
    assert Design(3, 4).n == 7
    assert Design(10, 10).size == 121
    with pytest.raises(ValueError):
        Design(0, 3)
    with pytest.raises(ValueError):
        Theta(-0.1, 0.5)
    assert Design(2, 2).contains(Outcome(2, 0))
    assert not Design(2, 2).contains(Outcome(3, 0))


@pytest.mark.parametrize(
    "n,s,theta,expected",
    [(1, 0, 0.0, 1.0), (2, 1, 0.5, 0.5), (5, 0, 1.0, 0.0), (5, 5, 1.0, 1.0), (4, 0, 0.0, 1.0)],
)
def test_binom_pmf_simple(n, s, theta, expected):
    assert binom_pmf(n, s, theta) == pytest.approx(expected, abs=1e-15)


def test_binom_pmf_against_rationals():
    assert binom_pmf(10, 3, 0.3) == pytest.approx(float(exact_binom_pmf(10, 3, Fraction(3, 10))), rel=1e-13)
    for n in (1, 7, 30, 120):
        for num in (1, 7, 13):
            th = Fraction(num, 17)
            v = binom_pmf_vector(n, float(th))
            ref = np.array([float(exact_binom_pmf(n, s, th)) for s in range(n + 1)])
            np.testing.assert_allclose(v, ref, rtol=1e-11, atol=1e-300)


def test_binom_pmf_large_n_no_overflow():
    v = binom_pmf_vector(10_000, 0.37)
    assert np.all(np.isfinite(v))
    assert v.sum() == pytest.approx(1.0, abs=1e-12)


def test_binom_pmf_errors():
    with pytest.raises(ValueError):
        binom_pmf(3, 4, 0.5)
    with pytest.raises(ValueError):
        binom_pmf(3, 1, 1.5)


def test_pmf_rows_sum_to_one():
    thetas = np.linspace(0, 1, 101)
    m = binom_pmf_matrix(25, thetas)
    np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-12)


def test_joint_pmf():
    assert joint_pmf(Design(1, 1), Outcome(0, 0), Theta(0, 0)) == 1.0
    assert joint_pmf(Design(1, 1), Outcome(0, 1), Theta(0.5, 0.5)) == pytest.approx(0.25)
    v = joint_pmf(Design(10, 10), Outcome(3, 7), Theta(0.3, 0.7))
    ref = float(exact_binom_pmf(10, 3, Fraction(3, 10)) * exact_binom_pmf(10, 7, Fraction(7, 10)))
    assert v == pytest.approx(ref, rel=1e-12)
    total = sum(
        joint_pmf(Design(4, 6), Outcome(a, b), Theta(0.2, 0.9)) for a in range(5) for b in range(7)
    )
    assert total == pytest.approx(1.0, abs=1e-12)


def test_log_beta():
    assert log_beta(1, 1) == 0.0
    assert log_beta(2, 1) == pytest.approx(math.log(0.5), rel=1e-14)
    assert log_beta(3, 4) == pytest.approx(math.log(1 / 60), rel=1e-13)
    with pytest.raises(ValueError):
        log_beta(0, 1)


def test_reg_inc_beta():
    assert reg_inc_beta(0.0, 2, 3) == 0.0
    assert reg_inc_beta(1.0, 2, 3) == 1.0
    assert reg_inc_beta(0.5, 2, 2) == pytest.approx(0.5, abs=1e-14)
    rng = np.random.default_rng(3)
    for _ in range(200):
        x = rng.uniform()
        a, b = rng.uniform(0.5, 300, size=2)
        v = reg_inc_beta(x, a, b)
        assert v == pytest.approx(stats.beta.cdf(x, a, b), abs=1e-12)
        assert v + reg_inc_beta(1 - x, b, a) == pytest.approx(1.0, abs=1e-12)
    xs = np.linspace(0, 1, 201)
    vals = [reg_inc_beta(x, 3.5, 7) for x in xs]
    assert np.all(np.diff(vals) >= 0)


def test_beta_quantile_inverts():
    for p in (1e-6, 0.025, 0.5, 0.975):
        x = beta_quantile(p, 140, 9)
        assert reg_inc_beta(x, 140, 9) == pytest.approx(p, abs=1e-12)


def test_clopper_pearson():
    lo, hi = clopper_pearson(0, 10, 0.95)
    assert lo == 0.0 and hi < 1
    lo, hi = clopper_pearson(10, 10, 0.95)
    assert hi == 1.0 and lo > 0
    lo, hi = clopper_pearson(140, 148, 0.95)
    assert lo < 140 / 148 < hi
    assert lo == pytest.approx(stats.beta.ppf(0.025, 140, 9), abs=1e-10)
    assert hi == pytest.approx(stats.beta.ppf(0.975, 141, 8), abs=1e-10)
    with pytest.raises(ValueError):
        clopper_pearson(11, 10)


@pytest.mark.parametrize("n", [1, 5, 12])
def test_clopper_pearson_coverage(n):
    intervals = [clopper_pearson(s, n, 0.95) for s in range(n + 1)]
    for th in np.linspace(0.0005, 0.9995, 400):
        pmf = binom_pmf_vector(n, th)
        cover = sum(p for p, (lo, hi) in zip(pmf, intervals) if lo <= th <= hi)
        assert cover >= 0.95 - 1e-9
