"""Metric tables and plot series computed from a completed forecast store.

Tables written by :func:`evaluate_store` (all CSV, under ``<store>/reports``
unless another directory is given):

``curve_r2.csv``          average R^2 per curve model and side
``point_metrics.csv``     MAE, RMSE and rMAE per model
``probabilistic.csv``     CRPS and PIT uniformity per percentile forecast
``dm_prices.csv``         one-sided DM p-values on daily absolute errors
``dm_curves_<side>.csv``  the same on daily curve losses
``mae_by_hour.csv``, ``crps_by_hour.csv``

:func:`write_plot_data` adds the R^2 functions and PIT histograms.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backtest import CURVE_MODELS, NAIVE, ForecastStore
from .evaluation import (
    MetricError,
    crps,
    daily_absolute_loss,
    daily_curve_loss,
    dm_matrix,
    pit,
    pit_uniformity,
    point_metrics,
    squared_correlation,
)
from .market_data import format_number
from .models import HOURS
from .smoothing import EvaluationGrid

logger = logging.getLogger(__name__)

SIDES = ("supply", "demand")
PIT_BINS = 20


class ReportError(ValueError):
    pass


@dataclass
class StoreReport:
    days: list[str]
    grid: np.ndarray
    points: dict[str, dict] = field(default_factory=dict)
    mae_by_hour: dict[str, np.ndarray] = field(default_factory=dict)
    price_losses: dict[str, np.ndarray] = field(default_factory=dict)
    r2: dict[tuple[str, str], tuple[np.ndarray, float]] = field(default_factory=dict)
    curve_losses: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    probabilistic: dict[tuple[str, str], dict] = field(default_factory=dict)


def _fmt(v) -> str:
    v = float(v)
    return "" if not np.isfinite(v) else format_number(v)


def _write(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _grid_from_config(store: ForecastStore) -> np.ndarray:
    cfg = {}
    path = store.root / "config.txt"
    if path.is_file():
        for line in path.read_text(encoding="utf-8").splitlines():
            if "=" in line:
                k, v = (s.strip() for s in line.split("=", 1))
                cfg[k] = v
    lo = float(cfg.get("price_min", 0.0))
    hi = float(cfg.get("price_max", 300.0))
    size = int(cfg.get("grid_size", 301))
    return EvaluationGrid.uniform(lo, hi, size).prices


def _aligned(stamps, values, index: dict[str, int], n: int) -> np.ndarray:
    out = np.full(n, np.nan)
    for s, v in zip(stamps, values):
        if s in index:
            out[index[s]] = v
    return out


def collect(store_dir) -> StoreReport:
    """Compute every metric available in the store."""
    store = ForecastStore(store_dir)
    stamps, actual = store.read_actual()
    if not stamps:
        raise ReportError(f"store {store.root} holds no realised prices")
    index = {s: i for i, s in enumerate(stamps)}
    n = len(stamps)
    if n % HOURS:
        raise ReportError("realised prices do not cover whole days")
    days = [s[:10] for s in stamps[::HOURS]]
    hours = np.tile(np.arange(HOURS), n // HOURS)
    rep = StoreReport(days, _grid_from_config(store))
    models = store.models()
    preds = {m: _aligned(*store.read_points(m), index, n) for m in models}
    naive = preds.get(NAIVE)

    for m, p in preds.items():
        ok = np.isfinite(p)
        if not ok.all():
            raise ReportError(f"model {m} has {int((~ok).sum())} missing hourly forecasts")
        rep.price_losses[m] = daily_absolute_loss(p.reshape(-1, HOURS), actual.reshape(-1, HOURS))
        ref = naive if naive is not None else np.full(n, np.nan)
        try:
            mr = point_metrics(p, actual, ref, hours)
            rmae = mr.rmae
        except MetricError:
            e = p - actual
            mr = None
            rmae = float("nan")
        if mr is None:
            mae, rmse = float(np.mean(np.abs(e))), float(np.sqrt(np.mean(e**2)))
            by_hour = np.abs(e).reshape(-1, HOURS).mean(axis=0)
        else:
            mae, rmse, by_hour = mr.mae, mr.rmse, mr.mae_by_hour
        rep.points[m] = {"mae": mae, "rmse": rmse, "rmae": rmae}
        rep.mae_by_hour[m] = by_hour

    actual_days = store.curve_days("actual")
    if actual_days:
        act = np.stack([store.load_curves("actual", d) for d in actual_days])  # (D, 24, 2, G)
        for m in models:
            if m not in CURVE_MODELS and m != NAIVE:
                continue
            cdays = store.curve_days(m)
            if cdays != actual_days:
                continue
            pred = np.stack([store.load_curves(m, d) for d in cdays])
            rep.curve_losses[m] = {}
            for s, side in enumerate(SIDES):
                P = pred[:, :, s].reshape(-1, pred.shape[-1])
                A = act[:, :, s].reshape(-1, act.shape[-1])
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    try:
                        rep.r2[(m, side)] = squared_correlation(P, A, rep.grid)
                    except MetricError as exc:
                        logger.warning("R^2 of %s %s undefined: %s", m, side, exc)
                rep.curve_losses[m][side] = daily_curve_loss(pred[:, :, s], act[:, :, s], rep.grid)

    for model, label in store.quantile_sets():
        qs_stamps, q = store.read_quantiles(model, label)
        rows = np.array([index[s] for s in qs_stamps])
        y = actual[rows]
        c = crps(q, y)
        v = pit(q, y)
        stat, pval = pit_uniformity(v, PIT_BINS)
        counts, _ = np.histogram(v, bins=PIT_BINS, range=(0.0, 1.0))
        by_hour = np.array([c[hours[rows] == h].mean() if np.any(hours[rows] == h) else np.nan for h in range(HOURS)])
        rep.probabilistic[(model, label)] = {
            "n": int(rows.size),
            "crps": float(c.mean()),
            "pit_chi2": stat,
            "pit_p": pval,
            "crps_by_hour": by_hour,
            "pit_counts": counts,
        }
    return rep


def _dm_rows(losses: dict[str, np.ndarray], min_length: int):
    names, m = dm_matrix(losses, min_length)
    return ["model"] + names, [[a] + [_fmt(v) for v in m[i]] for i, a in enumerate(names)]


def evaluate_store(store_dir, out_dir=None, *, min_dm_days: int = 30) -> list[Path]:
    """Write the metric tables; returns the written paths.

    DM matrices need ``min_dm_days`` test days and are skipped (with a log
    line) on shorter runs.
    """
    rep = collect(store_dir)
    out = Path(out_dir) if out_dir is not None else Path(store_dir) / "reports"
    written = []
    models = sorted(rep.points)
    written.append(
        _write(
            out / "point_metrics.csv",
            ["model", "mae", "rmse", "rmae"],
            [[m, _fmt(rep.points[m]["mae"]), _fmt(rep.points[m]["rmse"]), _fmt(rep.points[m]["rmae"])] for m in models],
        )
    )
    curve_models = sorted({m for m, _ in rep.r2})
    written.append(
        _write(
            out / "curve_r2.csv",
            ["model", "supply_r2", "demand_r2"],
            [[m] + [_fmt(rep.r2[(m, s)][1]) if (m, s) in rep.r2 else "" for s in SIDES] for m in curve_models],
        )
    )
    written.append(
        _write(
            out / "probabilistic.csv",
            ["model", "window", "n", "crps", "pit_chi2", "pit_p"],
            [
                [m, lab, r["n"], _fmt(r["crps"]), _fmt(r["pit_chi2"]), _fmt(r["pit_p"])]
                for (m, lab), r in sorted(rep.probabilistic.items())
            ],
        )
    )
    written.append(
        _write(
            out / "mae_by_hour.csv",
            ["hour"] + models,
            [[h] + [_fmt(rep.mae_by_hour[m][h]) for m in models] for h in range(HOURS)],
        )
    )
    keys = sorted(rep.probabilistic)
    written.append(
        _write(
            out / "crps_by_hour.csv",
            ["hour"] + [f"{m}/{lab}" for m, lab in keys],
            [[h] + [_fmt(rep.probabilistic[k]["crps_by_hour"][h]) for k in keys] for h in range(HOURS)],
        )
    )
    if len(rep.days) >= min_dm_days:
        written.append(_write(out / "dm_prices.csv", *_dm_rows(rep.price_losses, min_dm_days)))
        for side in SIDES:
            losses = {m: v[side] for m, v in sorted(rep.curve_losses.items())}
            if len(losses) > 1:
                written.append(_write(out / f"dm_curves_{side}.csv", *_dm_rows(losses, min_dm_days)))
    else:
        logger.info("DM tests skipped: %d test days, need %d", len(rep.days), min_dm_days)
    return written


def write_plot_data(store_dir, out_dir) -> list[Path]:
    """Per-hour series, R^2 functions and PIT histograms for external plotting."""
    rep = collect(store_dir)
    out = Path(out_dir)
    written = evaluate_store(store_dir, out)
    keys = sorted(rep.r2)
    written.append(
        _write(
            out / "r2_function.csv",
            ["price"] + [f"{m}/{s}" for m, s in keys],
            [[_fmt(p)] + [_fmt(rep.r2[k][0][i]) for k in keys] for i, p in enumerate(rep.grid)],
        )
    )
    pk = sorted(rep.probabilistic)
    edges = np.linspace(0.0, 1.0, PIT_BINS + 1)
    written.append(
        _write(
            out / "pit_histogram.csv",
            ["bin_low", "bin_high"] + [f"{m}/{lab}" for m, lab in pk],
            [
                [_fmt(edges[b]), _fmt(edges[b + 1])] + [int(rep.probabilistic[k]["pit_counts"][b]) for k in pk]
                for b in range(PIT_BINS)
            ],
        )
    )
    day_rows = []
    for i, d in enumerate(rep.days):
        day_rows.append([d] + [_fmt(rep.price_losses[m][i]) for m in sorted(rep.price_losses)])
    written.append(_write(out / "daily_absolute_loss.csv", ["date"] + sorted(rep.price_losses), day_rows))
    return written
