import warnings

import numpy as np
import pytest
from scipy.optimize import linprog
from scipy.stats import kstest

from mocforecast.evaluation import pit
from mocforecast.probabilistic import (
    LEVELS,
    DegenerateErrorModelError,
    EmpiricalPriceDistribution,
    ErrorModel,
    SimulationWarning,
    WindowError,
    conformal_quantiles,
    ensemble_vertical_average,
    estimate_error_model,
    idr_quantiles,
    normal_quantiles,
    point_price,
    postprocess_point_forecasts,
    qrm_quantiles,
    quantile_regression,
    simulate_price_distribution,
    simulation_rng,
)
from mocforecast.representation import CurvePairBasis, FpcaBasis
from mocforecast.smoothing import EvaluationGrid

GRID = EvaluationGrid.uniform()


def linear_bases(a=100.0, b=60.0, d0=30_000.0):
    """Supply a*p and demand d0 - b*p, each shifted by one constant
    component of unit functional norm."""
    p = GRID.prices
    phi = np.full((1, p.size), 1.0 / np.sqrt(p[-1] - p[0]))
    ev = np.ones(1)
    s = FpcaBasis("supply", GRID, a * p, phi, ev, ev)
    d = FpcaBasis("demand", GRID, d0 - b * p, phi, ev, ev)
    return CurvePairBasis(s, d), phi[0, 0]


# error model


def test_constant_residuals_are_degenerate():
    e = np.broadcast_to(np.arange(24.0)[None, :, None], (40, 24, 2))
    with pytest.raises(DegenerateErrorModelError):
        estimate_error_model(e)
    em = estimate_error_model(e, allow_degenerate=True)
    np.testing.assert_allclose(em.mean[:, 0], np.arange(24))
    assert np.all(em.variance == 0) and np.all(em.pool == 0)


def test_standard_normal_pool(rng):
    em = estimate_error_model(rng.normal(size=(182, 24, 5)))
    assert abs(em.pool.mean()) < 0.1 and abs(em.pool.var() - 1) < 0.15
    assert em.pool.shape == (182 * 24, 5)


def test_hourly_scales_recovered(rng):
    sd = np.arange(1, 25.0)
    em = estimate_error_model(rng.normal(size=(2000, 24, 3)) * sd[None, :, None])
    ratio = em.variance / sd[:, None] ** 2
    assert np.all(np.abs(ratio - 1) < 0.15)  # se of a variance ratio at n=2000 is ~0.03


# bootstrap


def test_degenerate_model_returns_point_price():
    bases, _ = linear_bases()
    f = np.array([150.0, -80.0])
    dist = simulate_price_distribution(f, ErrorModel.degenerate(2), 5, bases, n=1000, rng=simulation_rng(1, 2))
    assert np.all(dist.quantiles == point_price(f, bases))


def test_fixed_seed_reproduces_quantiles(rng):
    bases, _ = linear_bases()
    em = estimate_error_model(rng.normal(size=(30, 24, 2)) * 500)
    a = simulate_price_distribution(np.zeros(2), em, 3, bases, n=10_000, rng=simulation_rng(9, 1, 3))
    b = simulate_price_distribution(np.zeros(2), em, 3, bases, n=10_000, rng=simulation_rng(9, 1, 3))
    c = simulate_price_distribution(np.zeros(2), em, 3, bases, n=10_000, rng=simulation_rng(9, 1, 4))
    np.testing.assert_array_equal(a.quantiles, b.quantiles)
    assert not np.array_equal(a.quantiles, c.quantiles)


def test_linear_toy_median_matches_closed_form(rng):
    a, b, d0 = 100.0, 60.0, 30_000.0
    bases, c = linear_bases(a, b, d0)
    sigma = 800.0
    em = ErrorModel(np.zeros((24, 2)), np.full((24, 2), sigma**2), rng.standard_normal((50_000, 2)))
    n = 20_000
    f = np.array([300.0, 100.0])
    dist = simulate_price_distribution(f, em, 0, bases, n=n, rng=simulation_rng(3))
    # p* = (d0 + c*(e_d + f_d) - c*(e_s + f_s)) / (a + b)
    centre = (d0 + c * (f[1] - f[0])) / (a + b)
    price_sd = c * sigma * np.sqrt(2) / (a + b)
    assert abs(dist.median - centre) < 3 * price_sd / np.sqrt(n)


def test_non_intersecting_draws_warn(rng):
    bases, c = linear_bases()
    # shifts of +-3e4 in score units push many draws off the grid
    em = ErrorModel(np.zeros((24, 2)), np.full((24, 2), 1.0), np.column_stack([np.r_[0.0, 0.0, 0.0, 6e5], np.zeros(4)]))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        dist = simulate_price_distribution(np.zeros(2), em, 0, bases, n=400, rng=simulation_rng(5))
    assert any(issubclass(w.category, SimulationWarning) for w in caught)
    assert np.all(np.isfinite(dist.quantiles))


def test_dimension_mismatch():
    bases, _ = linear_bases()
    with pytest.raises(ValueError):
        simulate_price_distribution(np.zeros(3), ErrorModel.degenerate(2), 0, bases)


# ensemble


def test_ensemble_of_identical_is_identity(rng):
    d = EmpiricalPriceDistribution.from_sample(rng.normal(50, 5, 1000))
    e = ensemble_vertical_average([d, d, d, d])
    np.testing.assert_allclose(e.quantiles, d.quantiles)


def test_two_point_masses():
    a = EmpiricalPriceDistribution.from_sample(np.full(10, 40.0))
    b = EmpiricalPriceDistribution.from_sample(np.full(10, 60.0))
    e = ensemble_vertical_average([a, b])
    np.testing.assert_allclose(e.cdf([39.9, 40.0, 59.9, 60.0]), [0.0, 0.5, 0.5, 1.0])


def test_ensemble_cdf_is_average(rng):
    dists = [EmpiricalPriceDistribution.from_sample(rng.normal(m, s, n)) for m, s, n in [(40, 5, 100), (45, 9, 300), (38, 2, 50), (50, 7, 1000)]]
    e = ensemble_vertical_average(dists)
    probes = rng.uniform(20, 70, 1000)
    avg = np.mean([d.cdf(probes) for d in dists], axis=0)
    np.testing.assert_allclose(e.cdf(probes), avg, atol=1e-9)
    assert np.all(np.diff(e.quantiles) >= 0)


def test_ensemble_keeps_dominance(rng):
    x = rng.normal(40, 3, 500)
    g = EmpiricalPriceDistribution.from_sample(x)
    # every member is an upward shift, so its cdf lies below g's everywhere
    dists = [EmpiricalPriceDistribution.from_sample(x + s * rng.uniform(0.5, 1.5)) for s in (1, 2, 3, 4)]
    probes = np.linspace(20, 70, 2000)
    e = ensemble_vertical_average(dists)
    assert np.all(e.cdf(probes) <= g.cdf(probes) + 1e-12)


# postprocessing


def test_conformal_from_unit_residuals():
    f = np.full(28, 50.0)
    y = f + np.tile([-1.0, 1.0], 14)
    q = conformal_quantiles(f, y, 50.0)
    assert q[24] <= 49 and q[74] >= 51


def test_normal_needs_spread():
    f = np.linspace(10, 40, 30)
    with pytest.raises(DegenerateErrorModelError):
        normal_quantiles(f, f, 20.0)
    q = normal_quantiles(f, f + 2.0 + np.tile([-1.0, 1.0], 15), 20.0)
    assert q[49] == pytest.approx(22.0)


def test_short_window_rejected():
    for method in ("N", "CP", "IDR", "QRM"):
        with pytest.raises(WindowError):
            postprocess_point_forecasts(method, np.arange(27.0), np.arange(27.0), 5.0)
    with pytest.raises(ValueError):
        postprocess_point_forecasts("XX", np.arange(30.0), np.arange(30.0), 5.0)


def test_idr_calibrated_pit(rng):
    f_train = rng.normal(50, 10, 300)
    y_train = f_train + rng.normal(0, 4, 300)
    f_new = rng.normal(50, 10, 1000)
    y_new = f_new + rng.normal(0, 4, 1000)
    values = [pit(idr_quantiles(f_train, y_train, f), y) for f, y in zip(f_new, y_new)]
    assert kstest(values, "uniform").statistic < 0.1


def test_quantile_regression_matches_linear_program(rng):
    x = rng.normal(50, 10, 60)
    y = 5 + 0.9 * x + rng.standard_t(4, 60) * 3
    taus = np.array([0.05, 0.3, 0.5, 0.9])
    icpt, slope = quantile_regression(x, y, taus)
    n = x.size
    for t, a, b in zip(taus, icpt, slope):
        # min tau*u + (1-tau)*v  s.t.  a + b x + u - v = y
        c = np.r_[0, 0, np.full(n, t), np.full(n, 1 - t)]
        A = np.hstack([np.ones((n, 1)), x[:, None], np.eye(n), -np.eye(n)])
        res = linprog(c, A_eq=A, b_eq=y, bounds=[(None, None)] * 2 + [(0, None)] * (2 * n), method="highs")
        r = y - a - b * x
        ours = np.sum(np.where(r >= 0, t * r, (t - 1) * r))
        assert ours <= res.fun + 2e-5 * max(1.0, res.fun)


def test_qrm_and_all_methods_are_sorted(rng):
    f = rng.normal(50, 10, 60)
    y = f + rng.normal(0, 3, 60)
    for method in ("N", "CP", "IDR", "QRM"):
        d = postprocess_point_forecasts(method, f, y, 55.0)
        assert d.quantiles.shape == LEVELS.shape and np.all(np.diff(d.quantiles) >= 0)
    multi = qrm_quantiles(np.column_stack([f, f + 1]), y, [55.0, 56.0])
    assert np.all(np.diff(multi) >= 0)
