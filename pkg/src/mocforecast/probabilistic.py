"""Probabilistic clearing-price forecasts.

Curve models get a residual bootstrap: standardised score residuals from a
calibration window are resampled, added to the point forecast, turned back
into curves and cleared. Price models get one of four postprocessing
schemes fitted on (forecast, realised) pairs: Gaussian (N), conformal (CP),
isotonic distributional regression (IDR) and quantile regression (QRM).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from numba import njit

from .representation import CurvePairBasis, enforce_monotonicity, pava
from .representation.isotonic import _pava_inplace

logger = logging.getLogger(__name__)

LEVELS = np.arange(1, 100) / 100.0
CALIBRATION_WINDOWS = (28, 56, 91, 182)
MIN_WINDOW = 28


class DegenerateErrorModelError(ValueError):
    pass


class WindowError(ValueError):
    pass


class SimulationWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class EmpiricalPriceDistribution:
    """Percentile forecast at levels 0.01..0.99, optionally backed by the
    weighted sample it was computed from (``atoms``/``weights``)."""

    quantiles: np.ndarray
    atoms: np.ndarray | None = None
    weights: np.ndarray | None = None
    n_simulations: int = 0

    def __post_init__(self):
        q = np.asarray(self.quantiles, dtype=float)
        if q.shape != LEVELS.shape:
            raise ValueError(f"need {LEVELS.size} quantiles, got {q.shape}")
        if np.any(np.diff(q) < 0):
            raise ValueError("quantiles must be non-decreasing")
        object.__setattr__(self, "quantiles", q)

    @classmethod
    def from_sample(cls, sample, weights=None) -> "EmpiricalPriceDistribution":
        """Quantiles by linear interpolation of order statistics; a weighted
        sample uses the lower inverse of its cdf unless weights are equal."""
        x = np.asarray(sample, dtype=float).ravel()
        if x.size == 0:
            raise ValueError("empty sample")
        order = np.argsort(x, kind="stable")
        x = x[order]
        if weights is None:
            w = np.full(x.size, 1.0 / x.size)
            q = np.quantile(x, LEVELS)
        else:
            w = np.asarray(weights, dtype=float).ravel()[order]
            w = w / w.sum()
            if np.allclose(w, w[0], rtol=1e-12, atol=0):
                q = np.quantile(x, LEVELS)
            else:
                cum = np.cumsum(w)
                q = x[np.minimum(np.searchsorted(cum, LEVELS - 1e-12), x.size - 1)]
        q = np.maximum.accumulate(q)
        return cls(q, x, w, x.size)

    @classmethod
    def from_quantiles(cls, quantiles) -> "EmpiricalPriceDistribution":
        q = np.maximum.accumulate(np.asarray(quantiles, dtype=float))
        return cls(q, q.copy(), np.full(q.size, 1.0 / q.size), 0)

    def cdf(self, x) -> np.ndarray:
        """Step cdf of the backing sample (of the quantiles if none)."""
        atoms = self.quantiles if self.atoms is None else self.atoms
        w = np.full(atoms.size, 1.0 / atoms.size) if self.weights is None else self.weights
        cum = np.concatenate([[0.0], np.cumsum(w)])
        return np.minimum(cum[np.searchsorted(atoms, x, side="right")], 1.0)

    @property
    def median(self) -> float:
        return float(self.quantiles[49])


def ensemble_vertical_average(distributions) -> EmpiricalPriceDistribution:
    """Equal-weight mixture: the ensemble cdf is the average of the member
    cdfs at every price."""
    dists = list(distributions)
    if not dists:
        raise ValueError("no distributions to average")
    atoms, weights = [], []
    for d in dists:
        a = d.quantiles if d.atoms is None else d.atoms
        w = np.full(a.size, 1.0 / a.size) if d.weights is None else d.weights
        atoms.append(a)
        weights.append(w / len(dists))
    out = EmpiricalPriceDistribution.from_sample(np.concatenate(atoms), np.concatenate(weights))
    return EmpiricalPriceDistribution(out.quantiles, out.atoms, out.weights, sum(d.n_simulations for d in dists))


@dataclass(frozen=True, eq=False)
class ErrorModel:
    mean: np.ndarray  # (24, K)
    variance: np.ndarray  # (24, K)
    pool: np.ndarray  # (M, K) standardised residuals of every hour

    @property
    def dim(self) -> int:
        return self.mean.shape[1]

    @classmethod
    def degenerate(cls, dim: int, hours: int = 24) -> "ErrorModel":
        return cls(np.zeros((hours, dim)), np.zeros((hours, dim)), np.zeros((1, dim)))


def estimate_error_model(residuals, *, allow_degenerate: bool = False) -> ErrorModel:
    """Per-hour mean and variance of residuals ``(W, 24, K)``; standardised
    residuals of all hours form one pool.

    Zero-variance dimensions raise unless ``allow_degenerate``, in which case
    they contribute zeros to the pool.
    """
    e = np.asarray(residuals, dtype=float)
    if e.ndim != 3:
        raise ValueError("residuals must be (days, hours, dims)")
    if not np.all(np.isfinite(e)):
        raise ValueError("non-finite residuals")
    mu = e.mean(axis=0)
    var = e.var(axis=0)
    flat = var <= 1e-14 * np.maximum(1.0, mu**2)
    if flat.any():
        if not allow_degenerate:
            hours, dims = np.nonzero(flat)
            raise DegenerateErrorModelError(f"zero residual variance at (hour, dim) {list(zip(hours, dims))[:5]}")
        var = np.where(flat, 0.0, var)
    scale = np.sqrt(np.where(flat, 1.0, var))
    eta = np.where(flat, 0.0, (e - mu) / scale)
    return ErrorModel(mu, var, eta.reshape(-1, e.shape[2]))


def simulation_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent stream for one (day, hour, model, window, ...) key."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


@njit(cache=True, nogil=True)
def _clear_rows(grid, base_s, base_d, ds, dd):
    """Per row: perturb both curves, project onto monotone curves and clear
    on the grid (same rule as :func:`~mocforecast.curves.clear_on_grid`)."""
    n, g = ds.shape
    prices = np.full(n, np.nan)
    ok = np.zeros(n, np.bool_)
    s = np.empty(g)
    d = np.empty(g)
    w = np.ones(g)
    tmp = np.empty(g)
    for r in range(n):
        mono_s = True
        mono_d = True
        for i in range(g):
            s[i] = base_s[i] + ds[r, i]
            d[i] = -(base_d[i] + dd[r, i])
            if i > 0:
                if s[i] < s[i - 1]:
                    mono_s = False
                if d[i] < d[i - 1]:
                    mono_d = False
        if not mono_s:
            _pava_inplace(s, w, tmp)
            s[:] = tmp
        if not mono_d:
            _pava_inplace(d, w, tmp)
            d[:] = tmp
        first = -1
        for i in range(g):
            if -d[i] - s[i] <= 0:
                first = i
                break
        if first <= 0:
            continue
        d0 = -d[first - 1] - s[first - 1]
        d1 = -d[first] - s[first]
        frac = 1.0 if d1 == 0 else d0 / (d0 - d1)
        prices[r] = grid[first - 1] + frac * (grid[first] - grid[first - 1])
        ok[r] = True
    return prices, ok


def _clear_sample(point_s, point_d, ds, dd, grid):
    ds = np.ascontiguousarray(np.atleast_2d(ds), dtype=float)
    dd = np.ascontiguousarray(np.atleast_2d(dd), dtype=float)
    return _clear_rows(np.asarray(grid, dtype=float), np.asarray(point_s, dtype=float), np.asarray(point_d, dtype=float), ds, dd)


def point_curves(forecast, bases: CurvePairBasis):
    """Monotone supply/demand grid curves of a point forecast vector."""
    s, d = bases.reconstruct(forecast)
    return enforce_monotonicity(s, "supply"), enforce_monotonicity(d, "demand")


def simulate_price_distribution(
    forecast,
    error_model: ErrorModel,
    hour: int,
    bases: CurvePairBasis,
    n: int = 5000,
    rng: np.random.Generator | None = None,
    *,
    max_rounds: int = 20,
    warn_fraction: float = 0.1,
) -> EmpiricalPriceDistribution:
    """Bootstrap distribution of the clearing price for one hour.

    Draws whose curves fail to cross are replaced by fresh draws, at most
    ``max_rounds`` times.
    """
    forecast = np.asarray(forecast, dtype=float)
    if forecast.shape != (bases.dim,) or error_model.dim != bases.dim:
        raise ValueError("forecast, error model and bases disagree on dimension")
    rng = rng if rng is not None else np.random.default_rng()
    grid = bases.grid.prices
    base_s, base_d = bases.reconstruct(forecast)
    mu = error_model.mean[hour]
    sd = np.sqrt(error_model.variance[hour])
    prices = []
    need, drawn, discarded = n, 0, 0
    for _ in range(max_rounds):
        eta = error_model.pool[rng.integers(0, error_model.pool.shape[0], size=need)]
        eps = mu + sd * eta
        ds, dd = bases.reconstruct_delta(eps)
        p, ok = _clear_sample(base_s, base_d, ds, dd, grid)
        prices.append(p[ok])
        drawn += need
        discarded += int((~ok).sum())
        need = int((~ok).sum())
        if need == 0:
            break
    sample = np.concatenate(prices)
    if sample.size == 0:
        raise DegenerateErrorModelError("no simulated curve pair intersects")
    if discarded > warn_fraction * n:
        warnings.warn(f"{discarded} of {drawn} simulated curve pairs did not intersect", SimulationWarning, stacklevel=2)
    if discarded:
        logger.debug("hour %d: %d non-intersecting draws replaced", hour, discarded)
    return EmpiricalPriceDistribution.from_sample(sample)


def point_price(forecast, bases: CurvePairBasis) -> float:
    """Clearing price of the point forecast curves (NaN if they miss)."""
    forecast = np.asarray(forecast, dtype=float)
    s, d = bases.reconstruct(forecast)
    zero = np.zeros_like(s)
    p, ok = _clear_sample(s, d, zero, zero, bases.grid.prices)
    return float(p[0]) if ok[0] else float("nan")


# price-based postprocessing


def _window(forecasts, actuals):
    f = np.asarray(forecasts, dtype=float).ravel()
    y = np.asarray(actuals, dtype=float).ravel()
    if f.shape != y.shape:
        raise ValueError("forecasts and actuals must align")
    if f.size < MIN_WINDOW:
        raise WindowError(f"calibration window of {f.size} < {MIN_WINDOW} observations")
    return f, y


def normal_quantiles(forecasts, actuals, new_forecast: float) -> np.ndarray:
    f, y = _window(forecasts, actuals)
    e = y - f
    sd = e.std(ddof=1)
    if not sd > 0:
        raise DegenerateErrorModelError("zero residual spread")
    return new_forecast + e.mean() + sd * norm.ppf(LEVELS)


def conformal_quantiles(forecasts, actuals, new_forecast: float) -> np.ndarray:
    """Symmetric split-conformal bands from absolute residuals: the central
    ``1 - 2 * min(tau, 1 - tau)`` interval sets the tau quantile."""
    f, y = _window(forecasts, actuals)
    a = np.abs(y - f)
    cover = np.abs(2 * LEVELS - 1)
    half = np.quantile(a, cover)
    return new_forecast + np.sign(LEVELS - 0.5) * half


def idr_quantiles(forecasts, actuals, new_forecast: float) -> np.ndarray:
    """Isotonic distributional regression with a single ordered covariate.

    For every threshold the conditional cdf is fitted by antitonic
    regression of the indicators on the forecast; the cdf at a new forecast
    is interpolated between neighbouring fitted forecasts.
    """
    f, y = _window(forecasts, actuals)
    xs, inv, counts = np.unique(f, return_inverse=True, return_counts=True)
    thresholds = np.unique(y)
    ind = (y[:, None] <= thresholds[None, :]).astype(float)
    means = np.zeros((xs.size, thresholds.size))
    np.add.at(means, inv, ind)
    means /= counts[:, None]
    fitted = pava(means.T, weights=counts.astype(float), increasing=False).T  # (n_x, n_thr)
    if new_forecast <= xs[0]:
        cdf = fitted[0]
    elif new_forecast >= xs[-1]:
        cdf = fitted[-1]
    else:
        j = int(np.searchsorted(xs, new_forecast))
        t = (new_forecast - xs[j - 1]) / (xs[j] - xs[j - 1])
        cdf = (1 - t) * fitted[j - 1] + t * fitted[j]
    cdf = np.maximum.accumulate(np.clip(cdf, 0.0, 1.0))
    idx = np.searchsorted(cdf, LEVELS - 1e-12, side="left")
    return thresholds[np.minimum(idx, thresholds.size - 1)]


def _pinball_profile(slopes, x, y, taus):
    """Pinball loss at each (slope, tau) after the optimal intercept."""
    r = y[None, :] - slopes[:, None] * x[None, :]  # (m, n)
    # lower tau-quantile of each row, a minimiser over the intercept
    k = np.clip(np.ceil(taus * x.size - 1e-9).astype(np.int64) - 1, 0, x.size - 1)
    icpt = np.take_along_axis(np.sort(r, axis=1), k[:, None], axis=1)[:, 0]
    u = r - icpt[:, None]
    loss = np.where(u >= 0, taus[:, None] * u, (taus[:, None] - 1) * u).sum(axis=1)
    return loss, icpt


def quantile_regression(x, y, taus=LEVELS, tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Linear quantile regression ``y ~ a + b x`` for each level in ``taus``.

    The loss profiled over the intercept is convex in the slope, so a
    golden-section search between the extreme pairwise slopes finds it.
    Returns ``(intercepts, slopes)``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    taus = np.asarray(taus, dtype=float)
    if np.ptp(x) == 0:
        return np.quantile(y, taus, method="inverted_cdf"), np.zeros_like(taus)
    dx = x[:, None] - x[None, :]
    dy = y[:, None] - y[None, :]
    pair = dx != 0
    s = dy[pair] / dx[pair]
    lo = np.full(taus.size, s.min())
    hi = np.full(taus.size, s.max())
    g = (np.sqrt(5) - 1) / 2
    a = hi - g * (hi - lo)
    b = lo + g * (hi - lo)
    fa, _ = _pinball_profile(a, x, y, taus)
    fb, _ = _pinball_profile(b, x, y, taus)
    scale = max(1.0, abs(s.max()), abs(s.min()))
    for _ in range(200):
        if np.all(hi - lo <= tol * scale):
            break
        left = fa <= fb
        hi = np.where(left, b, hi)
        lo = np.where(left, lo, a)
        na = hi - g * (hi - lo)
        nb = lo + g * (hi - lo)
        b_new = np.where(left, a, nb)
        a_new = np.where(left, na, b)
        fb_new = np.where(left, fa, np.nan)
        fa_new = np.where(left, np.nan, fb)
        need_a, need_b = left, ~left
        if need_a.any():
            v, _ = _pinball_profile(a_new[need_a], x, y, taus[need_a])
            fa_new[need_a] = v
        if need_b.any():
            v, _ = _pinball_profile(b_new[need_b], x, y, taus[need_b])
            fb_new[need_b] = v
        a, b, fa, fb = a_new, b_new, fa_new, fb_new
    slope = 0.5 * (lo + hi)
    _, icpt = _pinball_profile(slope, x, y, taus)
    return icpt, slope


def qrm_quantiles(forecasts, actuals, new_forecast: float) -> np.ndarray:
    """Quantile regression of realised prices on point forecasts.

    ``forecasts`` may be ``(W,)`` or ``(W, m)``; several point forecasts of
    the same day are averaged into one regressor.
    """
    fc = np.asarray(forecasts, dtype=float)
    x = fc.mean(axis=1) if fc.ndim == 2 else fc
    new = float(np.mean(new_forecast))
    x, y = _window(x, actuals)
    icpt, slope = quantile_regression(x, y)
    return np.sort(icpt + slope * new)


POSTPROCESSORS = {
    "N": normal_quantiles,
    "CP": conformal_quantiles,
    "IDR": idr_quantiles,
    "QRM": qrm_quantiles,
}


def postprocess_point_forecasts(method: str, forecasts, actuals, new_forecast: float) -> EmpiricalPriceDistribution:
    try:
        fn = POSTPROCESSORS[method]
    except KeyError:
        raise ValueError(f"unknown postprocessing method {method!r}") from None
    return EmpiricalPriceDistribution.from_quantiles(fn(forecasts, actuals, new_forecast))
