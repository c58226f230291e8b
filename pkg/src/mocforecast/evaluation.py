"""Point, curve and probabilistic forecast metrics, plus the
Diebold-Mariano test."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import chisquare, norm

from .probabilistic import LEVELS, EmpiricalPriceDistribution


class MetricError(ValueError):
    pass


class DegenerateTestError(MetricError):
    pass


@dataclass(frozen=True)
class MetricReport:
    mae: float
    rmse: float
    rmae: float
    mae_by_hour: np.ndarray | None = None


def point_metrics(predicted, actual, naive_predicted, hours=None) -> MetricReport:
    """MAE, RMSE and MAE relative to the naive forecast.

    With ``hours`` (same length, values 0..23) the MAE is also broken down
    by delivery hour.
    """
    p = np.asarray(predicted, dtype=float).ravel()
    a = np.asarray(actual, dtype=float).ravel()
    nv = np.asarray(naive_predicted, dtype=float).ravel()
    if not (p.size == a.size == nv.size) or p.size == 0:
        raise MetricError("predicted, actual and naive must have the same non-zero length")
    e = p - a
    mae = float(np.mean(np.abs(e)))
    naive_mae = float(np.mean(np.abs(nv - a)))
    if naive_mae == 0:
        raise MetricError("naive forecast is perfect, relative MAE undefined")
    by_hour = None
    if hours is not None:
        hours = np.asarray(hours).ravel()
        by_hour = np.array([np.mean(np.abs(e[hours == h])) if np.any(hours == h) else np.nan for h in range(24)])
    return MetricReport(mae, float(np.sqrt(np.mean(e**2))), mae / naive_mae, by_hour)


def _quantiles(dist) -> np.ndarray:
    if isinstance(dist, EmpiricalPriceDistribution):
        return dist.quantiles
    q = np.asarray(dist, dtype=float)
    if q.shape[-1] != LEVELS.size:
        raise MetricError(f"need {LEVELS.size} quantiles per forecast")
    return q


def pinball_loss(quantiles, realized, levels=LEVELS) -> np.ndarray:
    """Pinball loss per level; broadcasts over leading dimensions."""
    q = np.asarray(quantiles, dtype=float)
    u = np.asarray(realized, dtype=float)[..., None] - q
    return np.where(u >= 0, levels * u, (levels - 1) * u)


def crps(distribution, realized):
    """Quantile approximation of the CRPS: ``2 * sum_i rho_i(y - q_i) / 100``
    over the 99 percentiles, i.e. the quantile form of the integral with
    level spacing 0.01.

    Accepts one distribution (or a ``(..., 99)`` array of quantiles) and
    matching realisations.
    """
    q = _quantiles(distribution)
    out = 2.0 * pinball_loss(q, realized).sum(axis=-1) / (LEVELS.size + 1)
    return float(out) if np.ndim(out) == 0 else out


def pit(distribution, realized):
    """Probability integral transform from the interpolated quantile cdf.

    Realisations below the 1st or above the 99th percentile map to 0.005 and
    0.995. A realisation equal to tied quantiles gets their mean level.
    """
    q = _quantiles(distribution)
    if q.ndim > 1:
        y = np.broadcast_to(np.asarray(realized, dtype=float), q.shape[:-1])
        return np.array([pit(qi, yi) for qi, yi in zip(q.reshape(-1, q.shape[-1]), y.ravel())]).reshape(y.shape)
    y = float(realized)
    if y < q[0]:
        return 0.005
    if y > q[-1]:
        return 0.995
    tied = q == y
    if tied.any():
        return float(LEVELS[tied].mean())
    j = int(np.searchsorted(q, y))
    t = (y - q[j - 1]) / (q[j] - q[j - 1])
    return float(LEVELS[j - 1] + t * (LEVELS[j] - LEVELS[j - 1]))


def pit_uniformity(values, bins: int = 20) -> tuple[float, float]:
    """Chi-square test of PIT values against the uniform law; returns
    ``(statistic, p_value)``."""
    v = np.asarray(values, dtype=float).ravel()
    counts, _ = np.histogram(v, bins=bins, range=(0.0, 1.0))
    res = chisquare(counts)
    return float(res.statistic), float(res.pvalue)


def squared_correlation(predicted, actual, grid, *, return_mask: bool = False):
    """Pointwise ``R^2(p) = 1 - SSE(p) / SST(p)`` across curves ``(T, G)``
    and its trapezoidal average over the grid.

    Grid points where the actual curves do not vary are left out (NaN in the
    function) with a warning.
    """
    P = np.asarray(predicted, dtype=float)
    A = np.asarray(actual, dtype=float)
    g = np.asarray(getattr(grid, "prices", grid), dtype=float)
    if P.shape != A.shape or P.ndim != 2 or P.shape[1] != g.size:
        raise MetricError("predicted and actual must be (T, G) on the grid")
    if P.shape[0] < 2:
        raise MetricError("need at least two curves")
    sse = ((P - A) ** 2).sum(axis=0)
    sst = ((A - A.mean(axis=0)) ** 2).sum(axis=0)
    ok = sst > 1e-12 * max(1.0, float(np.max(sst)))
    r2 = np.full(g.size, np.nan)
    r2[ok] = 1.0 - sse[ok] / sst[ok]
    if not ok.all():
        warnings.warn(f"R^2 undefined at {int((~ok).sum())} grid points with no variation", RuntimeWarning, stacklevel=2)
    if not ok.any():
        raise MetricError("actual curves do not vary anywhere on the grid")
    w = np.zeros(g.size)
    dg = np.diff(g)
    w[:-1] += 0.5 * dg
    w[1:] += 0.5 * dg
    w = np.where(ok, w, 0.0)
    avg = float(np.sum(w * np.nan_to_num(r2)) / w.sum())
    return (r2, avg, ok) if return_mask else (r2, avg)


@dataclass(frozen=True)
class DmResult:
    statistic: float
    p_value: float
    direction: str


def dm_test(loss_a, loss_b, alternative: str = "less", min_length: int = 30) -> DmResult:
    """Diebold-Mariano test on daily loss series with ``d = A - B``.

    ``alternative="less"`` tests whether A has smaller expected loss,
    ``"greater"`` the reverse, ``"two-sided"`` any difference.
    """
    a = np.asarray(loss_a, dtype=float).ravel()
    b = np.asarray(loss_b, dtype=float).ravel()
    if a.shape != b.shape:
        raise MetricError("loss series must have equal length")
    if a.size < min_length:
        raise MetricError(f"need at least {min_length} paired losses, got {a.size}")
    if alternative not in ("less", "greater", "two-sided"):
        raise ValueError(f"unknown alternative {alternative!r}")
    d = a - b
    if np.all(d == 0):
        stat = 0.0
    else:
        var = d.var()
        if var <= 1e-24 * max(1.0, float(np.mean(d**2))):
            raise DegenerateTestError("loss differential has zero variance")
        stat = float(d.mean() / np.sqrt(var / d.size))
    if alternative == "less":
        p = norm.cdf(stat)
    elif alternative == "greater":
        p = norm.sf(stat)
    else:
        p = 2 * norm.sf(abs(stat))
    return DmResult(stat, float(p), alternative)


def dm_matrix(losses: dict[str, np.ndarray], min_length: int = 30) -> tuple[list[str], np.ndarray]:
    """One-sided p-values: entry ``[i, j]`` tests whether model ``j`` beats
    model ``i`` (``loss_j < loss_i``). NaN on the diagonal and for
    degenerate pairs."""
    names = list(losses)
    m = np.full((len(names), len(names)), np.nan)
    for i, ni in enumerate(names):
        for j, nj in enumerate(names):
            if i == j:
                continue
            try:
                m[i, j] = dm_test(losses[nj], losses[ni], "less", min_length).p_value
            except DegenerateTestError:
                pass
    return names, m


def daily_curve_loss(predicted, actual, grid) -> np.ndarray:
    """Sum over hours of the L2 norm of the curve error, one value per day
    for arrays ``(days, 24, G)``."""
    g = np.asarray(getattr(grid, "prices", grid), dtype=float)
    w = np.zeros(g.size)
    dg = np.diff(g)
    w[:-1] += 0.5 * dg
    w[1:] += 0.5 * dg
    e = np.asarray(predicted, dtype=float) - np.asarray(actual, dtype=float)
    return np.sqrt((e**2 * w).sum(axis=-1)).sum(axis=-1)


def daily_absolute_loss(predicted, actual) -> np.ndarray:
    """Daily sum of absolute price errors for arrays ``(days, 24)``."""
    return np.abs(np.asarray(predicted, dtype=float) - np.asarray(actual, dtype=float)).sum(axis=-1)
