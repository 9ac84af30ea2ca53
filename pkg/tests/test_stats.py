import math

import numpy as np
import pytest
import scipy.special
import scipy.stats
from hypothesis import given, settings, strategies as st

from finder.stats import betainc, fit_power_law, pooled_se, t_test, t_test_samples, t_two_tailed_p


def test_formation_energy_row_pooled_se_and_t():
    se = pooled_se(0.0004, 3, 0.0008, 3)
    assert se == pytest.approx(math.sqrt((0.0004 ** 2 + 0.0008 ** 2) / 2 * (2 / 3)), rel=1e-12)
    t, p = t_test(0.0858, 0.0004, 3, 0.0913, 0.0008, 3)
    assert t == pytest.approx(-10.65, abs=0.005)
    assert 0.0002 <= p <= 0.0008


def test_matches_scipy_reference():
    t, p = t_test(0.0858, 0.0004, 3, 0.0913, 0.0008, 3)
    ref = scipy.stats.ttest_ind_from_stats(0.0858, 0.0004, 3, 0.0913, 0.0008, 3, equal_var=True)
    assert t == pytest.approx(ref.statistic, rel=1e-12)
    assert p == pytest.approx(ref.pvalue, rel=1e-9)


def test_equal_means_give_p_one():
    t, p = t_test(0.5, 0.1, 3, 0.5, 0.1, 3)
    assert t == 0.0 and p == pytest.approx(1.0, abs=1e-14)


def test_zero_se_cases(caplog):
    assert t_test(1.0, 0.0, 3, 1.0, 0.0, 3) == (0.0, 1.0)
    with caplog.at_level("WARNING"):
        t, p = t_test(1.0, 0.0, 3, 2.0, 0.0, 3)
    assert p == 0.0 and t == -math.inf
    assert "zero standard error" in caplog.text


def test_needs_two_samples_per_group():
    with pytest.raises(ValueError):
        t_test(1.0, 0.1, 1, 2.0, 0.1, 3)


@settings(max_examples=60, deadline=None)
@given(a=st.floats(0.05, 50), b=st.floats(0.05, 50), x=st.floats(0.0, 1.0))
def test_betainc_against_scipy(a, b, x):
    assert betainc(a, b, x) == pytest.approx(scipy.special.betainc(a, b, x), rel=1e-9, abs=1e-13)


@settings(max_examples=60, deadline=None)
@given(t=st.floats(-40, 40), df=st.integers(1, 200))
def test_two_tailed_p_against_scipy(t, df):
    assert t_two_tailed_p(t, df) == pytest.approx(2 * scipy.stats.t.sf(abs(t), df), rel=1e-8, abs=1e-14)


@settings(max_examples=40, deadline=None)
@given(m1=st.floats(-5, 5), m2=st.floats(-5, 5), s1=st.floats(0.01, 3), s2=st.floats(0.01, 3),
       n1=st.integers(2, 30), n2=st.integers(2, 30))
def test_swapping_groups_negates_t_keeps_p(m1, m2, s1, s2, n1, n2):
    t, p = t_test(m1, s1, n1, m2, s2, n2)
    t2, p2 = t_test(m2, s2, n2, m1, s1, n1)
    assert t2 == pytest.approx(-t, rel=1e-12, abs=1e-15)
    assert p2 == pytest.approx(p, rel=1e-12)


def test_samples_variant():
    rng = np.random.default_rng(0)
    a, b = rng.normal(0, 1, 8), rng.normal(0.5, 1, 6)
    t, p = t_test_samples(a, b)
    ref = scipy.stats.ttest_ind(a, b)
    assert t == pytest.approx(ref.statistic, rel=1e-10)
    assert p == pytest.approx(ref.pvalue, rel=1e-8)


def test_betainc_domain():
    with pytest.raises(ValueError):
        betainc(1, 1, 1.5)
    assert betainc(2, 3, 0.0) == 0.0 and betainc(2, 3, 1.0) == 1.0


def test_power_law_slope_recovered():
    n = np.array([100, 500, 1000, 5000, 20000])
    err = 3.0 * n ** -0.21
    slope, intercept = fit_power_law(n, err)
    assert slope == pytest.approx(-0.21, abs=1e-12)
    assert intercept == pytest.approx(math.log10(3.0), abs=1e-12)
