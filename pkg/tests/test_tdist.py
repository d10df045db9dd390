import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agbdval.tdist import betainc, t_cdf, t_quantile, t_two_sided
from oracles import t_quantile_by_integration


def test_median_is_zero():
    for df in (1, 2, 7, 300):
        assert t_quantile(0.5, df) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("df, p, expected", [(1, 0.975, 12.7062), (1000, 0.975, 1.9623)])
def test_reference_quantiles(df, p, expected):
    assert abs(t_quantile(p, df) - expected) < 1e-3


def test_large_df_approaches_normal():
    assert abs(t_quantile(0.975, 1e7) - 1.959964) < 1e-5


@pytest.mark.parametrize("df", [1, 5, 30, 1000])
@pytest.mark.parametrize("p", [0.9, 0.95, 0.975, 0.995])
def test_quantile_against_integration(df, p):
    assert abs(t_quantile(p, df) - t_quantile_by_integration(p, df)) < 1e-3


def test_matches_scipy_closely():
    from scipy import special, stats

    for df in (1, 2, 3, 10, 57, 1000):
        for p in (0.6, 0.9, 0.99, 0.9999):
            assert t_quantile(p, df) == pytest.approx(stats.t.ppf(p, df), rel=1e-9)
    for a, b, x in [(0.5, 0.5, 0.3), (2, 30, 0.01), (500, 0.5, 0.999), (3.5, 1.5, 0.8)]:
        assert betainc(a, b, x) == pytest.approx(special.betainc(a, b, x), rel=1e-11)


def test_symmetry_and_bounds():
    assert t_quantile(0.1, 4) == pytest.approx(-t_quantile(0.9, 4), rel=1e-12)
    assert t_cdf(0.0, 3) == 0.5
    assert t_two_sided(0.0, 3) == 1.0
    for p in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            t_quantile(p, 5)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-4, 1 - 1e-4), st.sampled_from([1, 2, 3, 5, 10, 30, 100, 1000]))
def test_quantile_inverts_cdf(p, df):
    assert t_cdf(t_quantile(p, df), df) == pytest.approx(p, abs=1e-8)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 50), st.floats(0.5, 200))
def test_two_sided_p_in_unit_interval(t, df):
    pv = t_two_sided(t, df)
    assert 0.0 <= pv <= 1.0
    assert t_two_sided(-t, df) == pv


def test_cdf_monotone():
    xs = np.linspace(-20, 20, 401)
    cdf = [t_cdf(x, 3) for x in xs]
    assert all(a <= b for a, b in zip(cdf, cdf[1:]))
