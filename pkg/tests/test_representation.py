import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mocforecast.representation import (
    CurvePairBasis,
    GridConstructionError,
    RankError,
    enforce_monotonicity,
    export_bases,
    fit_fpca,
    fit_zst,
    knee_point,
    pava,
    select_num_components,
    threshold_components,
)
from mocforecast.smoothing import EvaluationGrid, SmoothCurve

GRID = EvaluationGrid.uniform()


def synthetic_supply(rng, t=100):
    """Smooth increasing curves driven by three latent factors."""
    p = GRID.prices / 300.0
    a = rng.normal(size=(t, 3))
    base = 1000 * p + 200 * np.sqrt(p)
    return base + 80 * a[:, :1] * p + 40 * a[:, 1:2] * np.sin(np.pi * p) + 15 * a[:, 2:3] * p**3


# PAVA


def brute_isotonic(y):
    """Best non-decreasing fit by enumerating every block partition; within a
    block the L2 optimum is the mean."""
    n = len(y)
    best, best_err = None, np.inf
    for cuts in itertools.product((0, 1), repeat=n - 1):
        fit, start = np.empty(n), 0
        for i in range(n):
            if i == n - 1 or cuts[i]:
                fit[start : i + 1] = np.mean(y[start : i + 1])
                start = i + 1
        if np.all(np.diff(fit) >= -1e-12):
            err = np.sum((fit - y) ** 2)
            if err < best_err - 1e-12:
                best, best_err = fit, err
    return best


def test_pava_three_points():
    np.testing.assert_allclose(pava([3.0, 1.0, 2.0]), [2.0, 2.0, 2.0])


def test_monotone_input_untouched(rng):
    x = np.sort(rng.normal(size=50))
    np.testing.assert_array_equal(enforce_monotonicity(x, "supply"), x)
    np.testing.assert_array_equal(enforce_monotonicity(x[::-1], "demand"), x[::-1])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=7))
def test_pava_matches_partition_search(values):
    y = np.array(values, float)
    out = pava(y)
    assert np.all(np.diff(out) >= 0)
    assert out.sum() == pytest.approx(y.sum())
    np.testing.assert_allclose(out, brute_isotonic(y), atol=1e-12)


def test_pava_rows_and_decreasing(rng):
    y = rng.normal(size=(5, 30))
    up = pava(y)
    down = pava(y, increasing=False)
    for r in range(5):
        np.testing.assert_allclose(up[r], pava(y[r]))
        np.testing.assert_allclose(down[r], -pava(-y[r]))
    assert np.all(np.diff(down, axis=1) <= 0)


def test_weighted_pava():
    np.testing.assert_allclose(pava([2.0, 0.0], weights=[3.0, 1.0]), [1.5, 1.5])


def test_enforce_on_smooth_curve(rng):
    vals = np.linspace(0, 100, GRID.size) + rng.normal(scale=5, size=GRID.size)
    out = enforce_monotonicity(SmoothCurve(GRID, vals, "supply"))
    assert isinstance(out, SmoothCurve) and np.all(np.diff(out.values) >= 0)
    with pytest.raises(ValueError):
        enforce_monotonicity(vals)


# FPCA


def test_identical_curves_zero_spectrum():
    x = np.tile(np.linspace(0, 5, GRID.size), (6, 1))
    b = fit_fpca(x, GRID)
    assert np.all(b.spectrum < 1e-20)
    np.testing.assert_allclose(b.mean, x[0])
    with pytest.raises(RankError):
        fit_fpca(x[:1], GRID)


def test_rank_one_family(rng):
    p = GRID.prices
    mean = p * 2.0
    shape = np.sin(p / 50.0)
    x = mean + rng.normal(size=(20, 1)) * shape
    b = fit_fpca(x, GRID, n_components=3)
    assert b.spectrum[0] > 0 and np.all(b.spectrum[1:] < 1e-9 * b.spectrum[0])
    phi = b.components[0]
    cos = abs(phi @ shape) / (np.linalg.norm(phi) * np.linalg.norm(shape))
    assert cos == pytest.approx(1.0, abs=1e-8)


def test_full_rank_round_trip_and_residuals(rng):
    x = synthetic_supply(rng)
    b = fit_fpca(x, GRID, n_components=GRID.size)
    rec = b.reconstruct(b.project(x))
    assert np.abs(rec - x).max() < 1e-6
    curve = x[0] + rng.normal(scale=5, size=GRID.size)
    w = GRID.trapezoid_weights()
    # the projection is orthogonal in the weighted L2 inner product
    res = [np.sqrt(np.sum(w * (b.truncate(k).reconstruct(b.truncate(k).project(curve)) - curve) ** 2)) for k in range(1, 40)]
    assert np.all(np.diff(res) <= 1e-9)


def test_eigenpairs_match_dense_solver(rng):
    x = synthetic_supply(rng)
    b = fit_fpca(x, GRID, n_components=10)
    w = GRID.trapezoid_weights()
    c = x - x.mean(axis=0)
    # weighted covariance operator applied to functions: C_w = cov @ diag(w)
    op = (c.T @ c / (x.shape[0] - 1)) * w[None, :]
    vals = np.sort(np.linalg.eigvals(op).real)[::-1][:10]
    np.testing.assert_allclose(b.eigenvalues, vals, rtol=1e-8, atol=1e-8 * vals[0])
    for k in range(10):
        if b.eigenvalues[k] < 1e-6 * b.eigenvalues[0]:
            break
        np.testing.assert_allclose(op @ b.components[k], b.eigenvalues[k] * b.components[k], atol=1e-8 * vals[0])


def test_components_orthonormal_and_variance(rng):
    x = synthetic_supply(rng)
    b = fit_fpca(x, GRID, n_components=8)
    gram = (b.components * b.weights) @ b.components.T
    np.testing.assert_allclose(gram, np.eye(8), atol=1e-8)
    total = ((x - x.mean(axis=0)) ** 2 * b.weights).sum() / (x.shape[0] - 1)
    assert b.spectrum.sum() == pytest.approx(total, rel=1e-8)
    assert b.explained_ratio.sum() == pytest.approx(1.0)


def test_project_reconstruct_identities(rng):
    x = synthetic_supply(rng)
    b = fit_fpca(x, GRID, n_components=5)
    np.testing.assert_allclose(b.reconstruct(np.zeros(5)), b.mean)
    z = rng.normal(size=(7, 5))
    np.testing.assert_allclose(b.project(b.reconstruct(z)), z, atol=1e-10)
    with pytest.raises(ValueError):
        b.reconstruct(np.zeros(4))


def test_component_selection():
    ev = np.array([100, 0.5, 0.3, 0.2])
    assert threshold_components(ev) == 1
    assert select_num_components(ev) == max(knee_point(ev) or 1, 1)
    assert select_num_components([5.0, 0, 0, 0, 0]) == 1
    # an elbow at 3 with a long tail
    ev = np.r_[[50, 30, 20], np.full(17, 0.3)]
    assert select_num_components(ev) >= 3
    with pytest.raises(ValueError):
        select_num_components([1.0])


def test_knee_of_convex_decreasing():
    y = 1.0 / np.arange(1, 21)
    k = knee_point(y)
    assert k is not None and 2 <= k <= 6
    assert knee_point(np.linspace(1, 0, 10)) is None


# ZST


def test_zst_round_trip_at_price_classes(rng):
    x = synthetic_supply(rng, 60)
    b = fit_zst(x, GRID, 8)
    assert b.n_components == 8 and np.all(np.diff(b.price_grid) > 0)
    assert b.price_grid[0] == 0 and b.price_grid[-1] == 300
    v = b.project(x)
    rec = b.reconstruct(v)
    np.testing.assert_allclose(rec[:, b.price_index], x[:, b.price_index], atol=1e-9)
    mean_rec = b.reconstruct(b.project(x.mean(axis=0)))
    np.testing.assert_allclose(mean_rec[b.price_index], x.mean(axis=0)[b.price_index], atol=1e-9)
    # delta maps are the linear parts of the affine maps
    np.testing.assert_allclose(b.reconstruct(v[0]) - b.reconstruct(np.zeros(8)), b.reconstruct_delta(v[0]), atol=1e-9)


def test_zst_classes_follow_steep_regions():
    p = GRID.prices
    # quantity rises sharply between 40 and 60 EUR/MWh
    curve = 1000.0 / (1.0 + np.exp(-(p - 50) / 3.0))
    x = np.vstack([curve * s for s in (0.9, 1.0, 1.1)])
    b = fit_zst(x, GRID, 10)
    inner = b.price_grid[1:-1]
    assert np.mean((inner > 35) & (inner < 65)) > 0.7


def test_zst_demand_side(rng):
    x = synthetic_supply(rng, 40)[:, ::-1]
    b = fit_zst(x, GRID, 6, side="demand")
    rec = b.reconstruct(b.project(x))
    np.testing.assert_allclose(rec[:, b.price_index], x[:, b.price_index], atol=1e-9)


def test_zst_rejects_flat_mean():
    with pytest.raises(GridConstructionError):
        fit_zst(np.full((5, GRID.size), 3.0), GRID, 4)
    with pytest.raises(GridConstructionError):
        fit_zst(np.tile(np.linspace(0, 1, GRID.size), (3, 1)), GRID, 1)


def test_zst_loses_more_than_fpca_at_equal_k(rng):
    x = synthetic_supply(rng, 120)
    train, test = x[:100], x[100:]
    errs = []
    for k in (3, 5, 8):
        f = fit_fpca(train, GRID, n_components=k)
        z = fit_zst(train, GRID, k)
        ef = np.mean((f.reconstruct(f.project(test)) - test) ** 2)
        ez = np.mean((z.reconstruct(z.project(test)) - test) ** 2)
        errs.append(ez >= ef)
    assert all(errs)


def test_pair_basis_and_export(rng, tmp_path):
    s = synthetic_supply(rng, 30)
    d = s[:, ::-1]
    pair = CurvePairBasis(fit_fpca(s, GRID, n_components=3), fit_zst(d, GRID, 4, side="demand"))
    v = pair.project(s, d)
    assert v.shape == (30, 7) and pair.dim == 7
    rs, rd = pair.reconstruct(v)
    assert rs.shape == rd.shape == (30, GRID.size)
    with pytest.raises(ValueError):
        pair.reconstruct(np.zeros(6))
    doc = json.loads(export_bases(pair, tmp_path / "b.json").read_text())
    assert doc["supply"]["kind"] == "fpca" and doc["demand"]["kind"] == "zst"
