"""Rolling daily-recalibration experiment.

Every test day ``d``:

1. pick smoothing bandwidths by GCV on the curves of ``d - 1``;
2. refit FPCA (dynamic number of components) and ZST (fixed size) bases on
   the smoothed curves of the training window ``[d - W, d - 1]``;
3. project the window plus seven days of lags, fit every model and forecast
   the 24 hours of ``d``;
4. once enough out-of-sample residuals exist, produce percentile forecasts
   for the curve models (residual bootstrap) and for the postprocessed price
   models.

Everything written to the store is a deterministic function of the config
and the data.
"""

from __future__ import annotations

import csv
import logging
from collections import OrderedDict, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from datetime import date, timedelta
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .calendar import DEFAULT_HOLIDAYS, calendar_dummies, load_holidays
from .curves import StepCurve, clear_market
from .market_data import (
    EXOGENOUS_HEADER,
    ConfigurationError,
    GapError,
    apply_market_coupling,
    format_number,
    parse_exogenous,
    parse_order_book,
)
from .models import HOURS, Panel, fit_day_ahead, naive_forecast, predict_day
from .probabilistic import (
    CALIBRATION_WINDOWS,
    EmpiricalPriceDistribution,
    ensemble_vertical_average,
    estimate_error_model,
    postprocess_point_forecasts,
    simulate_price_distribution,
    simulation_rng,
)
from .probabilistic import _clear_sample
from .regression import AsinhScaler
from .representation import CurvePairBasis, enforce_monotonicity, fit_fpca, fit_zst
from .smoothing import EvaluationGrid, default_bandwidths, select_bandwidth_many, smoother_matrix

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 364
REPRESENTATIONS = ("fpca", "zst")
CURVE_VARIANTS = ("arx", "farx", "varx", "fvarx")
CURVE_MODELS = tuple(f"{r}-{v}" for r in REPRESENTATIONS for v in CURVE_VARIANTS)
PRICE_MODELS = ("price-arx", "price-farx", "lear")
NAIVE = "naive"
ALL_MODELS = CURVE_MODELS + PRICE_MODELS + (NAIVE,)
POSTPROCESSED = (("naive", "N"), ("price-farx", "N"), ("price-farx", "QRM"), ("price-farx", "CP"), ("price-farx", "IDR"))
LEAR_EXOG = ("load_fc", "res_fc")
EXOG_NAMES = tuple(EXOGENOUS_HEADER[1:])


class BacktestError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configuration


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


@dataclass(frozen=True)
class ExperimentConfig:
    orders: Path
    exogenous: Path
    test_start: date
    test_end: date
    store_dir: Path
    coupling: Path | None = None
    holidays: Path | None = None
    window_days: int = DEFAULT_WINDOW
    models: tuple[str, ...] = ALL_MODELS
    k_selection: str = "auto"
    zst_k: str = "auto"
    n_simulations: int = 5000
    calibration_windows: tuple[int, ...] = CALIBRATION_WINDOWS
    probabilistic: bool = True
    seed: int = 0
    allow_short_window: bool = False
    audit: bool = True
    on_failure: str = "fail"
    grid_size: int = 301
    price_min: float = 0.0
    price_max: float = 300.0

    def __post_init__(self):
        unknown = [m for m in self.models if m not in ALL_MODELS]
        if unknown:
            raise ConfigurationError(f"unknown models {unknown}; choose from {list(ALL_MODELS)}")
        if self.test_end < self.test_start:
            raise ConfigurationError("test_end before test_start")
        if self.window_days < 2:
            raise ConfigurationError("window_days must be at least 2")
        non_default = self.window_days != DEFAULT_WINDOW or tuple(self.calibration_windows) != CALIBRATION_WINDOWS
        if non_default and not self.allow_short_window:
            raise ConfigurationError(
                "window_days/calibration_windows differ from the defaults; set allow_short_window = true "
                "to run this non-default setup"
            )
        if self.on_failure not in ("fail", "naive"):
            raise ConfigurationError("on_failure must be 'fail' or 'naive'")
        if self.n_simulations < 1:
            raise ConfigurationError("n_simulations must be positive")
        if any(w < 28 for w in self.calibration_windows) or not self.calibration_windows:
            raise ConfigurationError("calibration windows must be at least 28 days")
        self.fixed_k()
        self.fixed_zst_k()

    def fixed_k(self) -> tuple[int, int] | None:
        if self.k_selection == "auto":
            return None
        if self.k_selection.startswith("fixed:"):
            ks = _ints(self.k_selection[6:])
            if len(ks) == 2 and min(ks) >= 1:
                return ks
        raise ConfigurationError(f"k_selection must be 'auto' or 'fixed:Ks,Kd', got {self.k_selection!r}")

    def fixed_zst_k(self) -> tuple[int, int] | None:
        if self.zst_k == "auto":
            return None
        ks = _ints(self.zst_k)
        if len(ks) != 2 or min(ks) < 2:
            raise ConfigurationError(f"zst_k must be 'auto' or 'Ks,Kd' with both >= 2, got {self.zst_k!r}")
        return ks

    @property
    def default_windows(self) -> bool:
        return self.window_days == DEFAULT_WINDOW and tuple(self.calibration_windows) == CALIBRATION_WINDOWS

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        """Parse ``key = value`` lines; ``#`` starts a comment. Relative
        paths are resolved against the config file's directory."""
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        raw: dict[str, str] = {}
        for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{n}: expected 'key = value'")
            k, v = (s.strip() for s in line.split("=", 1))
            raw[k] = v
        return cls.from_mapping(raw, base=path.parent)

    @classmethod
    def from_mapping(cls, raw: dict[str, str], base: Path = Path(".")) -> "ExperimentConfig":
        raw = dict(raw)
        data_dir = raw.pop("data_dir", None)
        if data_dir is not None:
            d = base / data_dir
            raw.setdefault("orders", str(d / "orders.csv"))
            raw.setdefault("exogenous", str(d / "exogenous.csv"))
            if (d / "coupling.csv").exists():
                raw.setdefault("coupling", str(d / "coupling.csv"))
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - names)
        if unknown:
            raise ConfigurationError(f"unknown config keys {unknown}")
        kw: dict = {}
        try:
            for k, v in raw.items():
                if k in ("orders", "exogenous", "coupling", "holidays", "store_dir"):
                    kw[k] = (base / v) if v else None
                elif k in ("test_start", "test_end"):
                    kw[k] = date.fromisoformat(v)
                elif k in ("window_days", "n_simulations", "seed", "grid_size"):
                    kw[k] = int(v)
                elif k in ("price_min", "price_max"):
                    kw[k] = float(v)
                elif k in ("probabilistic", "allow_short_window", "audit"):
                    kw[k] = _bool(v)
                elif k == "models":
                    kw[k] = tuple(m.strip() for m in v.split(",") if m.strip())
                elif k == "calibration_windows":
                    kw[k] = _ints(v)
                else:
                    kw[k] = v
        except ValueError as exc:
            raise ConfigurationError(f"bad config value: {exc}") from None
        missing = [k for k in ("orders", "exogenous", "test_start", "test_end", "store_dir") if kw.get(k) is None]
        if missing:
            raise ConfigurationError(f"missing config keys {missing}")
        return cls(**kw)

    def to_text(self) -> str:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, Path):
                v = v.as_posix()
            elif v is None:
                v = ""
            out.append(f"{f.name} = {v}")
        return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True, eq=False)
class MarketData:
    """Daily arrays: raw quantity curves on the evaluation grid
    ``raw[day, hour, side, price]`` (side 0 supply, 1 demand), clearing
    prices ``prices[day, hour]``, exogenous ``x[day, hour, var]`` and
    dummies ``z[day]``."""

    days: tuple[date, ...]
    grid: EvaluationGrid
    raw: np.ndarray
    prices: np.ndarray
    x: np.ndarray
    z: np.ndarray
    holidays: frozenset = DEFAULT_HOLIDAYS

    @property
    def n_days(self) -> int:
        return len(self.days)

    def index(self, day: date) -> int:
        i = (day - self.days[0]).days
        if not 0 <= i < self.n_days:
            raise ConfigurationError(f"{day} outside the data range {self.days[0]}..{self.days[-1]}")
        return i

    @classmethod
    def from_records(cls, snapshots, exogenous, grid: EvaluationGrid | None = None, holidays=DEFAULT_HOLIDAYS):
        grid = grid or EvaluationGrid.uniform()
        snaps = sorted(snapshots, key=lambda s: s.timestamp)
        exo = {r.timestamp: r for r in exogenous}
        if not snaps or len(snaps) % HOURS:
            raise GapError([])
        first = snaps[0].timestamp
        if first.hour != 0:
            raise ConfigurationError("data must start at hour 00 UTC")
        n = len(snaps) // HOURS
        days = tuple(first.date() + timedelta(days=i) for i in range(n))
        raw = np.empty((n, HOURS, 2, grid.size))
        prices = np.empty((n, HOURS))
        x = np.empty((n, HOURS, len(EXOG_NAMES)))
        missing = []
        for k, snap in enumerate(snaps):
            i, h = divmod(k, HOURS)
            expect = first + timedelta(hours=k)
            if snap.timestamp != expect:
                raise GapError([expect])
            if snap.coupling is not None:
                snap = apply_market_coupling(snap)
            s = StepCurve.from_orders(snap.supply_prices, snap.supply_quantities, "supply")
            d = StepCurve.from_orders(snap.demand_prices, snap.demand_quantities, "demand")
            prices[i, h] = clear_market(s, d).price
            # evaluating on the grid equals evaluating the restricted curves
            raw[i, h, 0] = s(grid.prices)
            raw[i, h, 1] = d(grid.prices)
            rec = exo.get(snap.timestamp)
            if rec is None:
                missing.append(snap.timestamp)
            else:
                x[i, h] = rec.values
        if missing:
            raise GapError(missing)
        z = calendar_dummies(days, holidays)
        return cls(days, grid, raw, prices, x, z, frozenset(holidays))

    @classmethod
    def load(cls, config: ExperimentConfig) -> "MarketData":
        snaps = parse_order_book(config.orders, config.coupling)
        exo = parse_exogenous(config.exogenous)
        holidays = load_holidays(config.holidays) if config.holidays else DEFAULT_HOLIDAYS
        grid = EvaluationGrid.uniform(config.price_min, config.price_max, config.grid_size)
        return cls.from_records(snaps.values(), exo.values(), grid, holidays)


class SmoothedCurves:
    """Nadaraya-Watson smoothed curves of the whole dataset, cached per
    (side, bandwidth) with a small LRU."""

    def __init__(self, data: MarketData, maxsize: int = 4):
        self.data = data
        self.maxsize = maxsize
        self._cache: OrderedDict = OrderedDict()

    def get(self, side: int, h: float) -> np.ndarray:
        key = (side, float(h))
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        L = smoother_matrix(self.data.grid, h)
        out = self.data.raw[:, :, side, :] @ L.T
        self._cache[key] = out
        if len(self._cache) > self.maxsize:
            self._cache.popitem(last=False)
        return out


@dataclass(frozen=True, eq=False)
class DayBases:
    day_index: int
    bandwidths: tuple[float, float]
    fpca: CurvePairBasis
    train: tuple[int, int]  # first and last training day index


def select_day_bandwidths(data: MarketData, t: int) -> tuple[float, float]:
    """GCV bandwidths from the 24 curves of the day before ``t``."""
    cands = default_bandwidths()
    return tuple(select_bandwidth_many(data.raw[t - 1, :, side, :], data.grid, cands) for side in (0, 1))


def fit_day_bases(data: MarketData, smooth: SmoothedCurves, t: int, window: int, fixed_k=None) -> DayBases:
    hs = select_day_bandwidths(data, t)
    sides = []
    for side, name in ((0, "supply"), (1, "demand")):
        curves = smooth.get(side, hs[side])[t - window : t].reshape(-1, data.grid.size)
        k = None if fixed_k is None else fixed_k[side]
        sides.append(fit_fpca(curves, data.grid, name, n_components=k))
    return DayBases(t, hs, CurvePairBasis(*sides), (t - window, t - 1))


def fit_day_zst(data: MarketData, smooth: SmoothedCurves, bases: DayBases, window: int, ks) -> CurvePairBasis:
    t = bases.day_index
    sides = []
    for side, name in ((0, "supply"), (1, "demand")):
        curves = smooth.get(side, bases.bandwidths[side])[t - window : t].reshape(-1, data.grid.size)
        sides.append(fit_zst(curves, data.grid, ks[side], name))
    return CurvePairBasis(*sides)


# ---------------------------------------------------------------------------
# store


def _month(day: date) -> str:
    return f"{day.year:04d}-{day.month:02d}"


def _stamp(day: date, hour: int) -> str:
    return f"{day.isoformat()}T{hour:02d}:00:00Z"


class ForecastStore:
    """Append-only CSV store partitioned by model and month, plus per-day
    ``.npy`` curve arrays."""

    def __init__(self, root, *, create: bool = False):
        self.root = Path(root)
        if create:
            if self.root.exists() and any(self.root.iterdir()):
                raise ConfigurationError(f"store {self.root} already exists and is not empty")
            self.root.mkdir(parents=True, exist_ok=True)
        elif not self.root.is_dir():
            raise ConfigurationError(f"no store at {self.root}")

    def _append(self, path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        new = not path.exists()
        with open(path, "a", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(header)
            w.writerows(rows)

    def append_points(self, model: str, day: date, prices, scores=None) -> None:
        rows = []
        for h in range(HOURS):
            sc = "" if scores is None else " ".join(format_number(float(v)) for v in scores[h])
            rows.append([_stamp(day, h), format_number(float(prices[h])), sc])
        self._append(self.root / "points" / model / f"{_month(day)}.csv", ["timestamp", "price", "scores"], rows)

    def append_actual(self, day: date, prices) -> None:
        rows = [[_stamp(day, h), format_number(float(prices[h]))] for h in range(HOURS)]
        self._append(self.root / "actual" / f"{_month(day)}.csv", ["timestamp", "price"], rows)

    def append_quantiles(self, model: str, label: str, day: date, quantiles) -> None:
        header = ["timestamp"] + [f"p{i:02d}" for i in range(1, 100)]
        rows = [[_stamp(day, h)] + [format_number(float(v)) for v in quantiles[h]] for h in range(HOURS)]
        self._append(self.root / "quantiles" / model / label / f"{_month(day)}.csv", header, rows)

    def save_curves(self, model: str, day: date, curves) -> None:
        path = self.root / "curves" / model / f"{day.isoformat()}.npy"
        path.parent.mkdir(parents=True, exist_ok=True)
        np.save(path, np.asarray(curves, dtype=np.float32), allow_pickle=False)

    def append_meta(self, name: str, header: Sequence[str], rows) -> None:
        self._append(self.root / "meta" / f"{name}.csv", header, rows)

    def write_text(self, name: str, text: str) -> None:
        (self.root / name).write_text(text, encoding="utf-8")

    # reading

    def _read(self, folder: Path):
        rows = []
        for path in sorted(folder.glob("*.csv")):
            with open(path, newline="", encoding="utf-8") as fh:
                r = csv.reader(fh)
                next(r)
                rows.extend(r)
        return rows

    def models(self) -> list[str]:
        d = self.root / "points"
        return sorted(p.name for p in d.iterdir()) if d.is_dir() else []

    def read_actual(self) -> tuple[list[str], np.ndarray]:
        rows = self._read(self.root / "actual")
        return [r[0] for r in rows], np.array([float(r[1]) for r in rows])

    def read_points(self, model: str) -> tuple[list[str], np.ndarray]:
        rows = self._read(self.root / "points" / model)
        return [r[0] for r in rows], np.array([float(r[1]) for r in rows])

    def quantile_sets(self) -> list[tuple[str, str]]:
        d = self.root / "quantiles"
        if not d.is_dir():
            return []
        return sorted((m.name, lab.name) for m in d.iterdir() for lab in m.iterdir())

    def read_quantiles(self, model: str, label: str) -> tuple[list[str], np.ndarray]:
        rows = self._read(self.root / "quantiles" / model / label)
        return [r[0] for r in rows], np.array([[float(v) for v in r[1:]] for r in rows]).reshape(-1, 99)

    def curve_days(self, model: str) -> list[str]:
        d = self.root / "curves" / model
        return sorted(p.stem for p in d.glob("*.npy")) if d.is_dir() else []

    def load_curves(self, model: str, day: str) -> np.ndarray:
        return np.load(self.root / "curves" / model / f"{day}.npy").astype(float)


# ---------------------------------------------------------------------------
# one day


@dataclass
class ModelForecast:
    prices: np.ndarray  # (24,)
    curves: np.ndarray | None = None  # (24, 2, G) monotone forecast curves
    scores: np.ndarray | None = None  # (24, K)
    residual_curves: np.ndarray | None = None  # (24, 2, G) actual - unmonotonised forecast
    fallback_hours: tuple[int, ...] = ()
    monotone_adjustment: float | None = None  # largest |PAVA change| over the day's curves


@dataclass
class DayForecast:
    day: date
    index: int
    models: dict[str, ModelForecast]
    bases: dict[str, CurvePairBasis]
    bandwidths: tuple[float, float]
    audit: list = field(default_factory=list)
    quantiles: dict = field(default_factory=dict)


def _audit_fit(records, offset: int, t: int, model: str) -> list:
    out = []
    for rec in records:
        kind = rec[0]
        if kind == "fit":
            _, _, h, comps, src, last_row = rec
            ok = src + offset <= t - 1 and last_row + offset <= t - 1
        else:
            _, _, h, comps, ysrc, src, row = rec
            ok = ysrc + offset <= t - 1 and src + offset <= t and row + offset == t
        out.append((model, kind, h, bool(ok)))
    return out


def point_prices(forecasts, bases: CurvePairBasis):
    """Clearing price per hour of forecast vectors ``(24, K)``, the monotone
    curves ``(24, 2, G)`` and the unmonotonised curves."""
    g = bases.grid.size
    prices = np.full(HOURS, np.nan)
    mono = np.empty((HOURS, 2, g))
    rawc = np.empty((HOURS, 2, g))
    zero = np.zeros(g)
    for h in range(HOURS):
        s, d = bases.reconstruct(forecasts[h])
        rawc[h, 0], rawc[h, 1] = s, d
        mono[h, 0] = enforce_monotonicity(s, "supply")
        mono[h, 1] = enforce_monotonicity(d, "demand")
        p, ok = _clear_sample(s, d, zero, zero, bases.grid.prices)
        if ok[0]:
            prices[h] = p[0]
    return prices, mono, rawc


class DayRunner:
    """Shared state of a backtest: data, smoothing cache, bases, residual
    pools."""

    def __init__(self, config: ExperimentConfig, data: MarketData, jobs: int = 1):
        self.config = config
        self.data = data
        self.jobs = max(1, int(jobs))
        self.smooth = SmoothedCurves(data)
        self._bases: dict[int, DayBases] = {}
        self.zst_k = config.fixed_zst_k()
        w = config.window_days
        self.start = data.index(config.test_start)
        self.end = data.index(config.test_end)
        if self.start < w + 7:
            raise ConfigurationError(
                f"test_start needs {w + 7} days of history, data starts {data.days[0]} ({self.start} days before)"
            )
        pool = max(config.calibration_windows)
        self.residuals = {m: deque(maxlen=pool) for m in config.models if m in CURVE_MODELS}
        self.pairs = {m: deque(maxlen=pool) for m in (NAIVE, "price-farx") if m in config.models}

    def _map(self, fn: Callable, items: list) -> list:
        if self.jobs == 1 or len(items) < 2:
            return [fn(i) for i in items]
        with ThreadPoolExecutor(max_workers=self.jobs) as ex:
            return list(ex.map(fn, items))

    def bases(self, t: int) -> DayBases:
        if t not in self._bases:
            self._bases[t] = fit_day_bases(self.data, self.smooth, t, self.config.window_days, self.config.fixed_k())
        return self._bases[t]

    def resolve_zst_k(self, days: Iterable[int]) -> tuple[int, int]:
        """Largest FPCA sizes chosen over ``days`` (at least 2 per side)."""
        if self.zst_k is None:
            ks = np.array([[self.bases(t).fpca.n_supply, self.bases(t).fpca.n_demand] for t in days])
            self.zst_k = (max(2, int(ks[:, 0].max())), max(2, int(ks[:, 1].max())))
            logger.info("ZST sizes fixed at %s (max FPCA choice over the test period)", self.zst_k)
        return self.zst_k

    def forecast_day(self, t: int) -> DayForecast:
        cfg, data = self.config, self.data
        w = cfg.window_days
        lo = t - w - 7
        rows = np.arange(7, w + 7)
        target = w + 7
        day = data.days[t]
        db = self.bases(t)
        reps = {}
        if any(m.startswith("fpca-") for m in cfg.models):
            reps["fpca"] = db.fpca
        if any(m.startswith("zst-") for m in cfg.models):
            reps["zst"] = fit_day_zst(data, self.smooth, db, w, self.resolve_zst_k([t]))
        smoothed = np.stack([self.smooth.get(s, db.bandwidths[s])[lo : t + 1] for s in (0, 1)], axis=2)
        panels = {}
        for name, bases in reps.items():
            y = bases.project(smoothed[:, :, 0], smoothed[:, :, 1])
            y[-1] = np.nan
            panels[name] = Panel(y, data.x[lo : t + 1], data.z[lo : t + 1], data.days[lo : t + 1], EXOG_NAMES)
        scaler = AsinhScaler.fit(data.prices[t - w : t], axis=0)
        yp = scaler.transform(data.prices[lo : t + 1])
        yp[-1] = np.nan
        price_panel = Panel(yp[:, :, None], data.x[lo : t + 1], data.z[lo : t + 1], data.days[lo : t + 1], EXOG_NAMES)
        lear_idx = [EXOG_NAMES.index(n) for n in LEAR_EXOG]
        lear_panel = Panel(yp[:, :, None], data.x[lo : t + 1][:, :, lear_idx], price_panel.z, price_panel.days, LEAR_EXOG)

        naive_prices = naive_forecast(data.prices, data.days, t, data.holidays)
        naive_curves = naive_forecast(smoothed, data.days[lo : t + 1], target, data.holidays)

        def run(model: str):
            audit: list = []
            if model == NAIVE:
                return ModelForecast(naive_prices, naive_curves), audit
            if model in CURVE_MODELS:
                rep, variant = model.split("-", 1)
                panel, bases = panels[rep], reps[rep]
            else:
                variant = model.replace("price-", "")
                panel = lear_panel if model == "lear" else price_panel
            fitted = fit_day_ahead(variant, panel, rows, audit=cfg.audit)
            pred = predict_day(fitted, panel, target, audit=audit if cfg.audit else None)
            audit = _audit_fit(list(fitted.audit) + audit, lo, t, model)
            if model not in CURVE_MODELS:
                return ModelForecast(scaler.inverse(pred[:, 0])), audit
            prices, mono, rawc = point_prices(pred, bases)
            miss = tuple(int(h) for h in np.flatnonzero(~np.isfinite(prices)))
            if miss:
                prices[list(miss)] = naive_prices[list(miss)]
            resid = smoothed[-1] - rawc
            adjust = float(np.abs(mono - rawc).max())
            return ModelForecast(prices, mono, pred, resid, miss, adjust), audit

        def guarded(model: str):
            try:
                return run(model)
            except Exception as exc:
                if cfg.on_failure == "naive":
                    logger.warning("%s failed on %s (%s); using the naive forecast", model, day, exc)
                    return ModelForecast(naive_prices.copy(), naive_curves, fallback_hours=tuple(range(HOURS))), []
                raise BacktestError(f"{model} on {day}: {exc}") from exc

        results = self._map(guarded, list(cfg.models))
        out = DayForecast(day, t, {}, reps, db.bandwidths)
        out.audit.append(("bases", "fpca", -1, db.train[1] <= t - 1 and db.train[0] == t - w))
        for model, (fc, audit) in zip(cfg.models, results):
            out.models[model] = fc
            out.audit.extend(audit)
        return out

    def probabilistic_day(self, fc: DayForecast) -> None:
        """Percentile forecasts from residuals of earlier days only."""
        cfg = self.config
        t = fc.index
        wins = tuple(cfg.calibration_windows)
        model_ids = {m: i for i, m in enumerate(ALL_MODELS)}
        tasks = []
        for model, pool in self.residuals.items():
            if len(pool) >= max(wins) and fc.models[model].scores is not None:
                tasks.append(("curve", model, None))
        for base, method in POSTPROCESSED:
            if base in self.pairs and len(self.pairs[base]) >= max(wins):
                tasks.append(("price", base, method))

        def run(task):
            kind, model, method = task
            per_window = {}
            if kind == "curve":
                rep = model.split("-", 1)[0]
                bases = fc.bases[rep]
                pool = list(self.residuals[model])
                assert all(d < t for d, _ in pool)
                pred = fc.models[model].scores
                for w in wins:
                    errs = np.stack([e for _, e in pool[-w:]])
                    em = estimate_error_model(bases.project_delta(errs[:, :, 0], errs[:, :, 1]), allow_degenerate=True)
                    dists = []
                    for h in range(HOURS):
                        rng = simulation_rng(cfg.seed, t, h, model_ids[model], w)
                        dists.append(simulate_price_distribution(pred[h], em, h, bases, cfg.n_simulations, rng))
                    per_window[w] = dists
                name = model
            else:
                pool = list(self.pairs[model])
                assert all(d < t for d, _, _ in pool)
                new = fc.models[model].prices
                for w in wins:
                    f = np.stack([p for _, p, _ in pool[-w:]])
                    a = np.stack([y for _, _, y in pool[-w:]])
                    per_window[w] = [postprocess_point_forecasts(method, f[:, h], a[:, h], new[h]) for h in range(HOURS)]
                name = f"{model}-{method}"
            out = {f"w{w:03d}": np.stack([d.quantiles for d in dists]) for w, dists in per_window.items()}
            ens = [ensemble_vertical_average([per_window[w][h] for w in wins]) for h in range(HOURS)]
            out["ens"] = np.stack([d.quantiles for d in ens])
            return name, out

        for name, out in self._map(run, tasks):
            fc.quantiles[name] = out

    def record_outcome(self, fc: DayForecast) -> None:
        """Make day ``fc.index`` available to later residual pools."""
        t = fc.index
        for model in self.residuals:
            r = fc.models[model].residual_curves
            if r is not None:
                self.residuals[model].append((t, r))
        for model in self.pairs:
            self.pairs[model].append((t, fc.models[model].prices, self.data.prices[t]))


def _write_day(store: ForecastStore, runner: DayRunner, fc: DayForecast) -> int:
    data = runner.data
    t, day = fc.index, fc.day
    store.append_actual(day, data.prices[t])
    store.save_curves("actual", day, data.raw[t])
    for model, mf in fc.models.items():
        store.append_points(model, day, mf.prices, mf.scores)
        if mf.curves is not None:
            store.save_curves(model, day, mf.curves)
        if mf.monotone_adjustment is not None:
            store.append_meta(
                "monotonicity", ["date", "model", "max_abs_adjustment"], [[day.isoformat(), model, format_number(mf.monotone_adjustment)]]
            )
        if mf.fallback_hours:
            store.append_meta(
                "fallbacks", ["date", "model", "hours"], [[day.isoformat(), model, " ".join(map(str, mf.fallback_hours))]]
            )
    for name in sorted(fc.quantiles):
        for label in sorted(fc.quantiles[name]):
            store.append_quantiles(name, label, day, fc.quantiles[name][label])
    fp = fc.bases.get("fpca")
    zst = fc.bases.get("zst")
    store.append_meta(
        "days",
        ["date", "h_supply", "h_demand", "k_supply", "k_demand", "zst_k_supply", "zst_k_demand", "fpca_fingerprint"],
        [
            [
                day.isoformat(),
                format_number(fc.bandwidths[0]),
                format_number(fc.bandwidths[1]),
                fp.n_supply if fp else "",
                fp.n_demand if fp else "",
                zst.n_supply if zst else "",
                zst.n_demand if zst else "",
                (fp.supply.fingerprint() + fp.demand.fingerprint()) if fp else "",
            ]
        ],
    )
    violations = sum(1 for rec in fc.audit if not rec[-1])
    if runner.config.audit:
        store.append_meta("audit", ["date", "checks", "violations"], [[day.isoformat(), len(fc.audit), violations]])
    return violations


@dataclass(frozen=True)
class BacktestSummary:
    store: Path
    days: int
    audit_checks: int
    audit_violations: int
    probabilistic_days: int


def run_backtest(config: ExperimentConfig, data: MarketData | None = None, jobs: int = 1) -> BacktestSummary:
    """Run the whole test period and write the store."""
    data = data or MarketData.load(config)
    runner = DayRunner(config, data, jobs)
    store = ForecastStore(config.store_dir, create=True)
    store.write_text("config.txt", config.to_text())
    if not config.default_windows:
        logger.warning("non-default windows: results are not comparable with the reference setup")
    days = list(range(runner.start, runner.end + 1))
    if any(m.startswith("zst-") for m in config.models):
        runner.resolve_zst_k(days)
    checks = violations = prob_days = 0
    for t in days:
        fc = runner.forecast_day(t)
        if config.probabilistic:
            runner.probabilistic_day(fc)
            prob_days += bool(fc.quantiles)
        violations += _write_day(store, runner, fc)
        checks += len(fc.audit)
        runner.record_outcome(fc)
        runner._bases.pop(t - 1, None)
        logger.info("%s done (%d/%d)", data.days[t], t - runner.start + 1, len(days))
    return BacktestSummary(store.root, len(days), checks, violations, prob_days)


def forecast_single_day(config: ExperimentConfig, day: date, data: MarketData | None = None, jobs: int = 1) -> DayForecast:
    """Point forecasts for one day, recalibrating exactly as the backtest
    does. With ``zst_k = auto`` the ZST sizes are the FPCA sizes of that
    day."""
    data = data or MarketData.load(config)
    cfg = replace(config, test_start=day, test_end=day)
    runner = DayRunner(cfg, data, jobs)
    return runner.forecast_day(runner.start)
