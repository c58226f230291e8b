import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from mocforecast.evaluation import (
    DegenerateTestError,
    MetricError,
    crps,
    daily_absolute_loss,
    daily_curve_loss,
    dm_matrix,
    dm_test,
    pinball_loss,
    pit,
    pit_uniformity,
    point_metrics,
    squared_correlation,
)
from mocforecast.probabilistic import LEVELS, EmpiricalPriceDistribution

GRID = np.linspace(0, 300, 301)


def crps_quadrature(quantiles, y, lo, hi, n=100_000):
    """Integral of (F(x) - 1{y <= x})^2 with F the piecewise-linear cdf
    through the quantiles, flat at 0 / 1 outside them."""
    x = np.linspace(lo, hi, n)
    F = np.interp(x, quantiles, LEVELS, left=0.0, right=1.0)
    return np.trapezoid((F - (x >= y)) ** 2, x)


def test_point_metrics_basics(rng):
    a = rng.normal(50, 5, 48)
    r = point_metrics(a, a, a + 1)
    assert r.mae == r.rmse == r.rmae == 0
    r = point_metrics([2.0, -2.0], [0.0, 0.0], [1.0, 1.0])
    assert r.mae == 2 and r.rmse == 2 and r.rmae == 2
    naive = a + rng.normal(size=48)
    assert point_metrics(naive, a, naive).rmae == 1.0
    hours = np.tile(np.arange(24), 2)
    assert point_metrics(a + 1, a, naive, hours).mae_by_hour.shape == (24,)
    with pytest.raises(MetricError):
        point_metrics(a + 1, a, a)


def test_crps_of_point_mass():
    d = EmpiricalPriceDistribution.from_quantiles(np.full(99, 40.0))
    for y in (10.0, 39.0, 55.0):
        assert crps(d, y) == pytest.approx(abs(40 - y), rel=0.02)
    assert crps(d, 40.0) == 0


def test_crps_minimal_at_median():
    q = norm.ppf(LEVELS, 50, 5)
    scan = np.linspace(40, 60, 201)
    scores = [crps(q, y) for y in scan]
    assert abs(scan[int(np.argmin(scores))] - 50) <= 0.1 + 1e-9


def test_crps_uniform_quadrature():
    q = LEVELS.copy()  # uniform[0, 1] percentiles
    assert abs(crps(q, 0.5) - crps_quadrature(q, 0.5, -0.5, 1.5)) < 1e-3


def test_crps_vectorised(rng):
    q = np.sort(rng.normal(50, 5, (10, 99)), axis=1)
    y = rng.normal(50, 5, 10)
    out = crps(q, y)
    assert out.shape == (10,) and np.all(out >= 0)
    np.testing.assert_allclose(out, [crps(qi, yi) for qi, yi in zip(q, y)])
    assert pinball_loss(q, y).shape == (10, 99)


def test_pit_rules():
    q = np.linspace(10, 108, 99)
    assert pit(q, q[49]) == pytest.approx(0.5)
    assert pit(q, 0.0) == 0.005 and pit(q, 500.0) == 0.995
    tied = np.r_[np.linspace(1, 40, 40), np.full(19, 50.0), np.linspace(60, 99, 40)]
    assert pit(tied, 50.0) == pytest.approx(LEVELS[40:59].mean())
    assert pit(q[None, :].repeat(3, 0), [0.0, q[49], 500]).tolist() == pytest.approx([0.005, 0.5, 0.995])


def test_pit_uniform_for_calibrated_forecasts(rng):
    n = 4392
    mu = rng.normal(60, 10, n)
    sd = rng.uniform(2, 8, n)
    y = rng.normal(mu, sd)
    q = norm.ppf(LEVELS[None, :], mu[:, None], sd[:, None])
    stat, p = pit_uniformity(pit(q, y))
    assert p > 0.01
    # a biased forecaster fails
    _, p_bad = pit_uniformity(pit(q + 3.0, y))
    assert p_bad < 1e-6


def test_r2_perfect_and_mean(rng):
    A = rng.normal(size=(20, GRID.size)).cumsum(axis=1)
    r2, avg = squared_correlation(A, A, GRID)
    assert np.all(r2 == 1) and avg == 1
    r2, avg = squared_correlation(np.broadcast_to(A.mean(0), A.shape), A, GRID)
    np.testing.assert_allclose(r2, 0, atol=1e-12)
    P = A + rng.normal(size=A.shape)
    r2, avg = squared_correlation(P, A, GRID)
    assert r2.min() <= avg <= r2.max()


def test_r2_skips_constant_points(rng):
    A = rng.normal(size=(10, GRID.size))
    A[:, :5] = 3.0
    with pytest.warns(RuntimeWarning):
        r2, avg, ok = squared_correlation(A + 0.1, A, GRID, return_mask=True)
    assert np.isnan(r2[:5]).all() and not ok[:5].any() and np.isfinite(avg)
    with pytest.raises(MetricError):
        squared_correlation(A[:1], A[:1], GRID)


def test_dm_identical_and_constant_shift(rng):
    a = rng.normal(size=40)
    r = dm_test(a, a)
    assert r.statistic == 0 and r.p_value == 0.5
    with pytest.raises(DegenerateTestError):
        dm_test(a + 1, a)
    with pytest.raises(MetricError):
        dm_test(a[:20], a[:20] + rng.normal(size=20))


def test_dm_power(rng):
    rejections = 0
    for _ in range(200):
        d = rng.normal(0.5, 1.0, 366)
        b = rng.normal(10, 1, 366)
        rejections += dm_test(b + d, b, "greater").p_value < 0.05
    assert rejections / 200 > 0.99


def test_dm_directions_and_matrix(rng):
    b = rng.normal(10, 1, 60)
    a = b - 0.5 + rng.normal(0, 0.3, 60)
    assert dm_test(a, b, "less").p_value < 0.01
    assert dm_test(a, b, "greater").p_value > 0.99
    assert dm_test(a, b, "two-sided").p_value < 0.02
    names, m = dm_matrix({"A": a, "B": b, "C": b.copy()})
    assert names == ["A", "B", "C"] and np.isnan(np.diag(m)).all()
    assert m[1, 0] < 0.01  # A beats B
    assert m[1, 2] == 0.5  # identical losses


def test_daily_losses():
    pred = np.zeros((2, 24, GRID.size))
    act = np.ones((2, 24, GRID.size))
    np.testing.assert_allclose(daily_curve_loss(pred, act, GRID), 24 * np.sqrt(300.0))
    np.testing.assert_allclose(daily_absolute_loss(np.zeros((3, 24)), np.full((3, 24), 2.0)), 48.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 400), min_size=99, max_size=99), st.floats(-200, 500))
def test_crps_non_negative(values, y):
    assert crps(np.sort(values), y) >= 0
