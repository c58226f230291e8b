"""Day-ahead regression models on daily panels of hourly targets.

A :class:`Panel` holds a target array ``y[day, hour, component]`` (curve
scores, or transformed prices with one component), exogenous forecasts
``x[day, hour, variable]`` and day-type dummies ``z[day]``. Every model is
24 separate regressions, one per delivery hour, fitted on the rows of a
training window and evaluated one day ahead.

Variants:

``arx``    own lags of one component at the same hour
``farx``   own lags of one component at all 24 hours
``varx``   lags of the full vector at the same hour, shared across responses
``fvarx``  own component at all hours plus the other components at the same hour
``lear``   price lags and exogenous lags at all 24 hours
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from datetime import date
from pathlib import Path
from typing import Sequence

import numpy as np

from .calendar import DEFAULT_HOLIDAYS, DUMMY_NAMES, naive_lag
from .regression import LassoFit, fit_lasso_aic

logger = logging.getLogger(__name__)

HOURS = 24
TARGET_LAGS = (1, 2, 3, 7)
EXOG_LAGS = (0, 1, 7)
VARIANTS = ("naive", "arx", "farx", "varx", "fvarx", "lear")
REGRESSION_VARIANTS = VARIANTS[1:]
MAX_LAG = max(TARGET_LAGS + EXOG_LAGS)


class HorizonError(ValueError):
    """Not enough history before a target day."""


class ModelInputError(ValueError):
    pass


class ModelFitError(RuntimeError):
    """A regression failed; the message names the hour and components."""


@dataclass(frozen=True, eq=False)
class Panel:
    y: np.ndarray  # (D, 24, K)
    x: np.ndarray  # (D, 24, r)
    z: np.ndarray  # (D, 3)
    days: tuple[date, ...] = ()
    x_names: tuple[str, ...] = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim == 2:
            y = y[:, :, None]
        x = np.asarray(self.x, dtype=float)
        z = np.asarray(self.z, dtype=float)
        if y.ndim != 3 or y.shape[1] != HOURS:
            raise ModelInputError("targets must be (days, 24, components)")
        if x.ndim != 3 or x.shape[:2] != y.shape[:2]:
            raise ModelInputError("exogenous must be (days, 24, variables) aligned with targets")
        if z.shape != (y.shape[0], len(DUMMY_NAMES)):
            raise ModelInputError("dummies must be (days, 3)")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        if not self.x_names:
            object.__setattr__(self, "x_names", tuple(f"x{j}" for j in range(x.shape[2])))

    @property
    def n_days(self) -> int:
        return self.y.shape[0]

    @property
    def n_components(self) -> int:
        return self.y.shape[2]

    @property
    def n_exog(self) -> int:
        return self.x.shape[2]

    def with_targets(self, y) -> "Panel":
        return Panel(y, self.x, self.z, self.days, self.x_names)


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Rows are target days; ``kinds``/``lags`` say where each column comes
    from (``"y"``, ``"x"`` or ``"z"`` at ``row_day - lag``)."""

    X: np.ndarray
    names: tuple[str, ...]
    kinds: np.ndarray
    lags: np.ndarray
    rows: np.ndarray

    def source_days(self) -> np.ndarray:
        return self.rows[:, None] - self.lags[None, :]


def feature_count(variant: str, n_components: int, n_exog: int) -> int:
    k, r = n_components, n_exog
    nl, nx = len(TARGET_LAGS), len(EXOG_LAGS)
    counts = {
        "arx": nl + nx * r + 3,
        "farx": nl * HOURS + nx * r + 3,
        "varx": nl * k + nx * r + 3,
        "fvarx": nl * HOURS + nl * (k - 1) + nx * r + 3,
        "lear": nl * HOURS + nx * r * HOURS + 3,
    }
    if variant not in counts:
        raise ValueError(f"no design for variant {variant!r}")
    return counts[variant]


def _check_rows(panel: Panel, rows) -> np.ndarray:
    rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
    if rows.size and (rows.min() < MAX_LAG or rows.max() >= panel.n_days):
        raise HorizonError(f"rows need {MAX_LAG} days of history inside a panel of {panel.n_days} days")
    return rows


@lru_cache(maxsize=4096)
def _schema(variant: str, hour: int, component: int, k: int, x_names: tuple[str, ...]):
    """Column names, kinds and lags of a design; depends only on its shape."""
    lags, xl, r = TARGET_LAGS, EXOG_LAGS, len(x_names)
    names: list[str] = []
    kinds: list[str] = []
    lag_col: list[int] = []

    def add(block_names, kind, block_lags):
        names.extend(block_names)
        kinds.extend([kind] * len(block_names))
        lag_col.extend(block_lags)

    if variant == "arx":
        add([f"y{component}_h{hour}_l{l}" for l in lags], "y", lags)
    elif variant in ("farx", "fvarx", "lear"):
        c = component if variant != "lear" else 0
        add([f"y{c}_h{j}_l{l}" for l in lags for j in range(HOURS)], "y", np.repeat(lags, HOURS))
        if variant == "fvarx":
            others = [m for m in range(k) if m != component]
            if others:
                add([f"y{m}_h{hour}_l{l}" for l in lags for m in others], "y", np.repeat(lags, len(others)))
    elif variant == "varx":
        add([f"y{m}_h{hour}_l{l}" for l in lags for m in range(k)], "y", np.repeat(lags, k))
    if variant == "lear":
        add([f"{v}_h{j}_l{l}" for l in xl for j in range(HOURS) for v in x_names], "x", np.repeat(xl, HOURS * r))
    else:
        add([f"{v}_h{hour}_l{l}" for l in xl for v in x_names], "x", np.repeat(xl, r))
    add(list(DUMMY_NAMES), "z", [0, 0, 0])
    k_arr = np.array(kinds)
    l_arr = np.asarray(lag_col, dtype=np.int64)
    k_arr.flags.writeable = False
    l_arr.flags.writeable = False
    return tuple(names), k_arr, l_arr


def build_features(variant: str, panel: Panel, hour: int, rows, component: int = 0) -> DesignMatrix:
    """Design matrix for ``hour`` at target ``rows``.

    ``component`` selects the response for the per-component variants (arx,
    farx, fvarx); varx and lear ignore it.
    """
    if variant not in REGRESSION_VARIANTS:
        raise ValueError(f"no design for variant {variant!r}")
    if not 0 <= hour < HOURS:
        raise ValueError(f"hour {hour} out of range")
    rows = _check_rows(panel, rows)
    K = panel.n_components
    if not 0 <= component < K:
        raise ValueError(f"component {component} out of range")
    n = rows.size
    back = rows[:, None] - np.array(TARGET_LAGS)[None, :]  # (n, 4)
    xback = rows[:, None] - np.array(EXOG_LAGS)[None, :]  # (n, 3)
    blocks = []
    if variant == "arx":
        blocks.append(panel.y[back, hour, component])
    elif variant in ("farx", "fvarx", "lear"):
        c = component if variant != "lear" else 0
        blocks.append(panel.y[back, :, c].reshape(n, -1))  # lag-major, then hour
        if variant == "fvarx" and K > 1:
            others = [m for m in range(K) if m != component]
            blocks.append(panel.y[back, hour][:, :, others].reshape(n, -1))
    else:  # varx
        blocks.append(panel.y[back, hour, :].reshape(n, -1))
    if variant == "lear":
        blocks.append(panel.x[xback].reshape(n, -1))
    else:
        blocks.append(panel.x[xback, hour, :].reshape(n, -1))
    blocks.append(panel.z[rows])
    names, kinds, lags = _schema(variant, hour, component if variant in ("arx", "farx", "fvarx") else 0, K, panel.x_names)
    return DesignMatrix(np.concatenate(blocks, axis=1), names, kinds, lags, rows)


def _designs(variant: str, panel: Panel, hour: int, rows):
    """(component indices, design) pairs that make up one hourly model."""
    if variant in ("varx", "lear"):
        comps = tuple(range(panel.n_components))
        return [(comps, build_features(variant, panel, hour, rows))]
    return [((k,), build_features(variant, panel, hour, rows, k)) for k in range(panel.n_components)]


@dataclass(frozen=True, eq=False)
class HourModel:
    components: tuple[tuple[int, ...], ...]
    fits: tuple[LassoFit, ...]
    schemas: tuple[tuple[str, ...], ...]


@dataclass(frozen=True, eq=False)
class FittedDayModel:
    variant: str
    hours: tuple[HourModel, ...]
    n_components: int
    train_rows: np.ndarray
    audit: list = field(default_factory=list)

    def coefficient_rows(self):
        for h, hm in enumerate(self.hours):
            for comps, fit, names in zip(hm.components, hm.fits, hm.schemas):
                coef = fit.coef.reshape(len(names), -1)
                icpt = np.atleast_1d(fit.intercept)
                for j, k in enumerate(comps):
                    yield h, k, "(intercept)", float(icpt[j])
                    for name, b in zip(names, coef[:, j]):
                        yield h, k, name, float(b)

    def write_coefficients(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["hour", "component", "feature", "coefficient"])
            for h, k, name, b in self.coefficient_rows():
                w.writerow([h, k, name, repr(b)])
        return path


def fit_day_ahead(variant: str, panel: Panel, train_rows, *, audit: bool = False) -> FittedDayModel:
    """Fit the 24 hourly regressions of ``variant`` on ``train_rows``.

    Each response gets its own AIC-selected penalty. With ``audit`` the
    latest source day of every design is recorded for leakage checks.
    """
    if variant not in REGRESSION_VARIANTS:
        raise ValueError(f"cannot fit variant {variant!r}")
    if variant == "lear" and panel.n_components != 1:
        raise ValueError("lear is a price model with a single target component")
    rows = _check_rows(panel, train_rows)
    if rows.size < 2:
        raise HorizonError("need at least two training days")
    hours, records = [], []
    for h in range(HOURS):
        comps_list, fits, schemas = [], [], []
        for comps, dm in _designs(variant, panel, h, rows):
            target = panel.y[rows][:, h, list(comps)]
            try:
                fit = fit_lasso_aic(dm.X, target[:, 0] if len(comps) == 1 else target)
            except Exception as exc:
                raise ModelFitError(f"{variant} hour {h} components {comps}: {exc}") from exc
            comps_list.append(comps)
            fits.append(fit)
            schemas.append(dm.names)
            if audit:
                records.append(("fit", variant, h, comps, int(dm.source_days().max()), int(rows.max())))
        hours.append(HourModel(tuple(comps_list), tuple(fits), tuple(schemas)))
    return FittedDayModel(variant, tuple(hours), panel.n_components, rows, records)


def predict_day(model: FittedDayModel, panel: Panel, row: int, *, audit: list | None = None) -> np.ndarray:
    """One-day-ahead prediction ``(24, K)`` for panel ``row``.

    Targets of ``row`` itself are never read; only its exogenous values and
    dummies enter.
    """
    if not np.all(np.isfinite(panel.x[row])) or not np.all(np.isfinite(panel.z[row])):
        raise ModelInputError(f"missing exogenous inputs for row {row}")
    out = np.empty((HOURS, model.n_components))
    for h, hm in enumerate(model.hours):
        for comps, fit in zip(hm.components, hm.fits):
            k = comps[0]
            dm = build_features(model.variant, panel, h, [row], k)
            if audit is not None:
                used = dm.source_days()[0]
                audit.append(("predict", model.variant, h, comps, int(used[dm.kinds == "y"].max()), int(used.max()), row))
            out[h, list(comps)] = np.atleast_1d(fit.predict(dm.X)[0])
    return out


def naive_forecast(values, days: Sequence[date], row: int, holidays=DEFAULT_HOLIDAYS) -> np.ndarray:
    """Copy of ``values[row - 7]`` on Mondays, Saturdays, Sundays and
    holidays, ``values[row - 1]`` otherwise; falls back to a one-day copy
    when the week-old value is unavailable."""
    lag = naive_lag(days[row], holidays)
    if row - lag < 0:
        if row < 1:
            raise HorizonError("naive forecast needs at least one previous day")
        logger.info("no value a week before %s, copying the previous day", days[row])
        lag = 1
    return np.array(values[row - lag], copy=True)
