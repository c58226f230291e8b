"""Order-book snapshots, exogenous predictors and market-coupling flows.

Hourly data is keyed by UTC timestamps. Orders are kept as numpy arrays per
side (a full year of GME-sized books would be millions of Python objects);
``MarketSnapshot.supply_orders`` / ``demand_orders`` materialise
:class:`OrderRecord` views on demand.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import norm

from .calendar import DEFAULT_HOLIDAYS

logger = logging.getLogger(__name__)

PRICE_FLOOR = -500.0
PRICE_CAP = 3000.0
SIDES = ("supply", "demand")

ORDERS_HEADER = ["timestamp", "side", "price_eur_mwh", "quantity_mwh"]
EXOGENOUS_HEADER = ["timestamp", "load_fc", "ntc_fr", "ntc_ch", "res_fc"]
COUPLING_HEADER = ["timestamp", "imports_mwh", "exports_mwh"]


class MarketDataError(ValueError):
    """Base class for ingestion problems."""


class ParseError(MarketDataError):
    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class GapError(MarketDataError):
    def __init__(self, missing: Sequence):
        self.missing = list(missing)
        shown = ", ".join(str(m) for m in self.missing[:10])
        more = f" (+{len(self.missing) - 10} more)" if len(self.missing) > 10 else ""
        super().__init__(f"missing {len(self.missing)} period(s): {shown}{more}")


class ConfigurationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class OrderRecord:
    timestamp: datetime
    side: str
    price: float
    quantity: float

    def __post_init__(self):
        if self.side not in SIDES:
            raise MarketDataError(f"unknown side {self.side!r}")
        if not PRICE_FLOOR <= self.price <= PRICE_CAP:
            raise MarketDataError(f"price {self.price} outside [{PRICE_FLOOR}, {PRICE_CAP}]")
        if not self.quantity > 0:
            raise MarketDataError(f"quantity must be positive, got {self.quantity}")


@dataclass(frozen=True)
class ExogenousRecord:
    timestamp: datetime
    load_forecast: float
    ntc_fr: float
    ntc_ch: float
    res_forecast: float

    def __post_init__(self):
        if min(self.values) < 0:
            raise MarketDataError(f"negative exogenous value at {self.timestamp}")

    @property
    def values(self) -> tuple[float, float, float, float]:
        return (self.load_forecast, self.ntc_fr, self.ntc_ch, self.res_forecast)


@dataclass(frozen=True)
class CouplingRecord:
    timestamp: datetime
    imports: float
    exports: float

    def __post_init__(self):
        if self.imports < 0 or self.exports < 0:
            raise MarketDataError(f"negative coupling flow at {self.timestamp}")


def _as_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=float).ravel()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class MarketSnapshot:
    """All orders of one hourly auction, each side held in merit order."""

    timestamp: datetime
    supply_prices: np.ndarray
    supply_quantities: np.ndarray
    demand_prices: np.ndarray
    demand_quantities: np.ndarray
    coupling: CouplingRecord | None = None

    def __post_init__(self):
        for side in SIDES:
            p = _as_array(getattr(self, f"{side}_prices"))
            q = _as_array(getattr(self, f"{side}_quantities"))
            if p.shape != q.shape:
                raise MarketDataError(f"{side} price/quantity length mismatch")
            if q.size and not np.all(q > 0):
                raise MarketDataError(f"{side} quantities must be positive")
            order = np.argsort(p if side == "supply" else -p, kind="stable")
            object.__setattr__(self, f"{side}_prices", _as_array(p[order]))
            object.__setattr__(self, f"{side}_quantities", _as_array(q[order]))

    @classmethod
    def from_orders(cls, timestamp, orders: Iterable[OrderRecord], coupling=None):
        orders = list(orders)
        kw = {}
        for side in SIDES:
            sel = [o for o in orders if o.side == side]
            kw[f"{side}_prices"] = [o.price for o in sel]
            kw[f"{side}_quantities"] = [o.quantity for o in sel]
        return cls(timestamp=timestamp, coupling=coupling, **kw)

    def orders(self, side: str) -> list[OrderRecord]:
        p = getattr(self, f"{side}_prices")
        q = getattr(self, f"{side}_quantities")
        return [OrderRecord(self.timestamp, side, float(a), float(b)) for a, b in zip(p, q)]

    @property
    def supply_orders(self) -> list[OrderRecord]:
        return self.orders("supply")

    @property
    def demand_orders(self) -> list[OrderRecord]:
        return self.orders("demand")

    def __eq__(self, other):
        if not isinstance(other, MarketSnapshot):
            return NotImplemented
        return (
            self.timestamp == other.timestamp
            and self.coupling == other.coupling
            and all(
                np.array_equal(getattr(self, f"{s}_{a}"), getattr(other, f"{s}_{a}"))
                for s in SIDES
                for a in ("prices", "quantities")
            )
        )


def apply_market_coupling(snapshot: MarketSnapshot) -> MarketSnapshot:
    """Fold the net cross-border exchange into the curves.

    Net imports become one supply order at the price floor, net exports one
    demand bid at the price cap, so both are accepted whatever the clearing
    price. The returned snapshot carries no coupling record (already applied).
    """
    c = snapshot.coupling
    if c is None:
        raise MarketDataError(f"no coupling record for {snapshot.timestamp}")
    net = c.imports - c.exports
    if net > 0:
        return replace(
            snapshot,
            supply_prices=np.append(snapshot.supply_prices, PRICE_FLOOR),
            supply_quantities=np.append(snapshot.supply_quantities, net),
            coupling=None,
        )
    if net < 0:
        return replace(
            snapshot,
            demand_prices=np.append(snapshot.demand_prices, PRICE_CAP),
            demand_quantities=np.append(snapshot.demand_quantities, -net),
            coupling=None,
        )
    return replace(snapshot, coupling=None)


# ---------------------------------------------------------------------------
# CSV I/O


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def format_number(x: float) -> str:
    # shortest repr that round-trips exactly
    return repr(float(x))


def _read_rows(path, header):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "empty file") from None
        if [h.strip() for h in first] != header:
            raise ParseError(path, 1, f"expected header {','.join(header)}, got {','.join(first)}")
        for row in reader:
            if not row:
                continue
            yield reader.line_num, row


def _float(path, line, text, name):
    try:
        return float(text)
    except ValueError:
        raise ParseError(path, line, f"bad {name} value {text!r}") from None


def _check_hours(stamps: Sequence[datetime], fill_missing: bool):
    """Return the complete hourly range, raising GapError on holes."""
    if not stamps:
        return []
    stamps = sorted(set(stamps))
    hour = timedelta(hours=1)
    full = []
    t = stamps[0]
    while t <= stamps[-1]:
        full.append(t)
        t += hour
    missing = sorted(set(full) - set(stamps))
    if missing and not fill_missing:
        raise GapError(missing)
    return full


def parse_order_book(
    path,
    coupling_path=None,
    *,
    fill_missing: bool = False,
) -> dict[datetime, MarketSnapshot]:
    """Read an orders CSV (and optionally the coupling CSV) into snapshots.

    Missing hours raise :class:`GapError` unless ``fill_missing`` is set, in
    which case the previous hour is copied forward (the rule used for
    daylight-saving gaps in local-time sources).
    """
    supply: dict[datetime, list] = {}
    demand: dict[datetime, list] = {}
    for line, row in _read_rows(path, ORDERS_HEADER):
        if len(row) != 4:
            raise ParseError(path, line, f"expected 4 fields, got {len(row)}")
        try:
            ts = parse_timestamp(row[0])
        except ValueError:
            raise ParseError(path, line, f"bad timestamp {row[0]!r}") from None
        side = row[1].strip()
        if side not in SIDES:
            raise ParseError(path, line, f"unknown side {side!r}")
        price = _float(path, line, row[2], "price")
        qty = _float(path, line, row[3], "quantity")
        if not qty > 0:
            raise ParseError(path, line, f"quantity must be positive, got {row[3].strip()}")
        if not PRICE_FLOOR <= price <= PRICE_CAP:
            raise ParseError(path, line, f"price {price} outside bidding domain")
        book = supply if side == "supply" else demand
        book.setdefault(ts, ([], []))
        book[ts][0].append(price)
        book[ts][1].append(qty)

    coupling = parse_coupling(coupling_path) if coupling_path is not None else {}
    hours = _check_hours(list(supply) + list(demand), fill_missing)
    if coupling_path is not None:
        absent = [t for t in hours if t not in coupling]
        if absent and not fill_missing:
            raise GapError(absent)

    out: dict[datetime, MarketSnapshot] = {}
    prev = None
    for ts in hours:
        if ts not in supply and ts not in demand:
            logger.warning("hour %s missing, copying %s", format_timestamp(ts), format_timestamp(prev.timestamp))
            snap = replace(prev, timestamp=ts)
        else:
            s = supply.get(ts, ([], []))
            d = demand.get(ts, ([], []))
            cp = coupling.get(ts)
            if cp is None and prev is not None and coupling_path is not None:
                cp = replace(prev.coupling, timestamp=ts) if prev.coupling else None
            snap = MarketSnapshot(ts, s[0], s[1], d[0], d[1], cp)
        out[ts] = snap
        prev = snap
    return out


def parse_exogenous(path, *, fill_missing: bool = False) -> dict[datetime, ExogenousRecord]:
    recs = {}
    for line, row in _read_rows(path, EXOGENOUS_HEADER):
        if len(row) != 5:
            raise ParseError(path, line, f"expected 5 fields, got {len(row)}")
        try:
            ts = parse_timestamp(row[0])
        except ValueError:
            raise ParseError(path, line, f"bad timestamp {row[0]!r}") from None
        vals = [_float(path, line, v, n) for v, n in zip(row[1:], EXOGENOUS_HEADER[1:])]
        if min(vals) < 0:
            raise ParseError(path, line, "exogenous values must be non-negative")
        if ts in recs:
            raise ParseError(path, line, f"duplicate hour {row[0]}")
        recs[ts] = ExogenousRecord(ts, *vals)
    hours = _check_hours(list(recs), fill_missing)
    out, prev = {}, None
    for ts in hours:
        prev = recs.get(ts) or replace(prev, timestamp=ts)
        out[ts] = prev
    return out


def parse_coupling(path) -> dict[datetime, CouplingRecord]:
    recs = {}
    for line, row in _read_rows(path, COUPLING_HEADER):
        if len(row) != 3:
            raise ParseError(path, line, f"expected 3 fields, got {len(row)}")
        try:
            ts = parse_timestamp(row[0])
        except ValueError:
            raise ParseError(path, line, f"bad timestamp {row[0]!r}") from None
        imp = _float(path, line, row[1], "imports")
        exp = _float(path, line, row[2], "exports")
        if imp < 0 or exp < 0:
            raise ParseError(path, line, "coupling flows must be non-negative")
        recs[ts] = CouplingRecord(ts, imp, exp)
    return recs


def write_order_book(path, snapshots: Iterable[MarketSnapshot]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ORDERS_HEADER)
        for snap in sorted(snapshots, key=lambda s: s.timestamp):
            ts = format_timestamp(snap.timestamp)
            for side in SIDES:
                for p, q in zip(getattr(snap, f"{side}_prices"), getattr(snap, f"{side}_quantities")):
                    w.writerow([ts, side, format_number(p), format_number(q)])


def write_coupling(path, snapshots: Iterable[MarketSnapshot]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COUPLING_HEADER)
        for snap in sorted(snapshots, key=lambda s: s.timestamp):
            c = snap.coupling
            if c is not None:
                w.writerow([format_timestamp(c.timestamp), format_number(c.imports), format_number(c.exports)])


def write_exogenous(path, records: Iterable[ExogenousRecord]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EXOGENOUS_HEADER)
        for r in sorted(records, key=lambda r: r.timestamp):
            w.writerow([format_timestamp(r.timestamp)] + [format_number(v) for v in r.values])


# ---------------------------------------------------------------------------
# synthetic market


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs of the synthetic Italian-like market.

    Capacities in MWh per hour; prices in EUR/MWh.
    """

    start: date = date(2023, 1, 1)
    base_load: float = 30000.0
    solar_capacity: float = 16000.0
    wind_capacity: float = 5000.0
    hydro_capacity: float = 7000.0
    baseload_capacity: float = 6000.0
    ccgt_capacity: float = 22000.0
    peaker_capacity: float = 7000.0
    ntc_fr_mean: float = 3000.0
    ntc_ch_mean: float = 2500.0
    gas_persistence: float = 0.97
    gas_volatility: float = 2.5
    res_forecast_error: float = 0.04
    orders_per_block: int = 12
    unit_persistence: float = 0.95
    offer_jitter: float = 1.5
    holidays: frozenset = field(default_factory=lambda: frozenset(DEFAULT_HOLIDAYS))


def _ar1(rng, n, phi, sigma, x0=0.0):
    out = np.empty(n)
    x = x0
    for i in range(n):
        x = phi * x + sigma * rng.standard_normal()
        out[i] = x
    return out


def generate_synthetic_market(seed: int, days: int, config: SyntheticConfig | None = None):
    """Simulate ``days`` days of hourly order books plus exogenous predictors.

    Returns ``(snapshots, exogenous)``, both lists ordered by timestamp. The
    supply stack is built from technology blocks whose offer-price
    distributions move with slow latent factors (fuel level, hydro
    availability); renewables enter near zero price in proportion to the
    published renewable forecast. Demand is mostly price-inelastic with an
    elastic tail and a low-price storage block.

    Each block is a fixed fleet of units: a unit's position inside its block
    and its capacity share persist, drifting slowly from day to day, and
    hourly offers only add a small jitter.
    """
    if days < 8:
        raise ConfigurationError(f"need at least 8 days of data, got {days}")
    cfg = config or SyntheticConfig()
    rng = np.random.default_rng(seed)
    hours = np.arange(24)

    gas = _ar1(rng, days, cfg.gas_persistence, cfg.gas_volatility)
    hydro = 0.75 + 0.15 * np.tanh(_ar1(rng, days, 0.9, 0.35))
    wind_level = 1.0 / (1.0 + np.exp(-_ar1(rng, days, 0.6, 1.0)))
    clearness = 0.55 + 0.4 / (1.0 + np.exp(-_ar1(rng, days, 0.5, 1.2)))
    demand_shock = _ar1(rng, days, 0.8, 0.015)
    ntc_fr_d = _ar1(rng, days, 0.7, 0.06)
    ntc_ch_d = _ar1(rng, days, 0.7, 0.06)

    solar_shape = np.clip(np.sin(np.pi * (hours - 6) / 13.0), 0.0, None) ** 1.5
    load_shape = 0.78 + 0.22 * np.clip(np.sin(np.pi * (hours - 5) / 17.0), 0.0, None) + 0.1 * np.exp(
        -0.5 * ((hours - 19) / 1.5) ** 2
    )
    load_shape = load_shape / load_shape.mean()

    snapshots: list[MarketSnapshot] = []
    exogenous: list[ExogenousRecord] = []
    t0 = datetime(cfg.start.year, cfg.start.month, cfg.start.day, tzinfo=timezone.utc)
    n = cfg.orders_per_block
    n_blocks = 8  # 7 supply technologies plus the elastic demand bids

    # unit positions: stationary N(0, 1) AR(1) paths per (block, unit)
    phi = cfg.unit_persistence
    pos = np.empty((days, n_blocks, n))
    pos[0] = rng.standard_normal((n_blocks, n))
    for d in range(1, days):
        pos[d] = phi * pos[d - 1] + np.sqrt(1 - phi**2) * rng.standard_normal((n_blocks, n))
    unif = norm.cdf(pos)  # the same paths as positions in [0, 1]
    shares = rng.lognormal(0.0, 0.3, (n_blocks, n))
    shares /= shares.sum(axis=1, keepdims=True)
    jit = cfg.offer_jitter

    for d in range(days):
        day = cfg.start + timedelta(days=d)
        doy = day.timetuple().tm_yday
        dow = day.weekday()
        if day in cfg.holidays or dow == 6:
            day_factor = 0.8
        elif dow == 5:
            day_factor = 0.9
        else:
            day_factor = 1.0
        annual_solar = 0.75 + 0.25 * np.cos(2 * np.pi * (doy - 172) / 365.0)
        annual_load = 1.0 + 0.07 * np.cos(2 * np.pi * (doy - 200) / 365.0)

        for h in range(24):
            ts = t0 + timedelta(days=d, hours=h)
            load = cfg.base_load * load_shape[h] * day_factor * annual_load * (1 + demand_shock[d])
            load_fc = load * (1 + 0.01 * rng.standard_normal())
            solar_fc = cfg.solar_capacity * solar_shape[h] * annual_solar * clearness[d]
            wind_fc = cfg.wind_capacity * wind_level[d] * (0.9 + 0.1 * np.cos(2 * np.pi * (h - 3) / 24))
            res_fc = solar_fc + wind_fc
            res = max(res_fc * (1 + cfg.res_forecast_error * rng.standard_normal()), 0.0)
            ntc_fr = max(cfg.ntc_fr_mean * (1 + ntc_fr_d[d] + 0.02 * rng.standard_normal()), 0.0)
            ntc_ch = max(cfg.ntc_ch_mean * (1 + ntc_ch_d[d] + 0.02 * rng.standard_normal()), 0.0)
            imports = 0.85 * ntc_fr * (1 + 0.05 * rng.standard_normal())
            exports = 300.0 * rng.uniform(0.5, 1.5)
            net_imports = max(imports - exports, 0.0)
            # renewables plus imports may not cover demand at zero price
            res = max(min(res, 0.75 * load - net_imports), 0.0)

            commit = 0.7 + 0.3 * load_shape[h] / load_shape.max()
            z, u = pos[d], unif[d]
            blocks = [
                # (total quantity, unit offer prices)
                (res, 4.0 * u[0]),
                (0.7 * ntc_ch, 15.0 + 30.0 * u[1]),
                (cfg.hydro_capacity * hydro[d], 72.0 + 0.3 * gas[d] + 12.0 * z[2]),
                (cfg.baseload_capacity, 92.0 + 0.5 * gas[d] + 8.0 * z[3]),
                (cfg.ccgt_capacity * commit, 118.0 + gas[d] + 10.0 * z[4]),
                (cfg.peaker_capacity, 165.0 + 115.0 * u[5] + 0.5 * gas[d]),
                (2500.0, 310.0 + 2690.0 * u[6]),
            ]
            sp, sq = [], []
            for b, (total, unit_prices) in enumerate(blocks):
                prices = np.clip(unit_prices + jit * rng.standard_normal(n), 0.0, PRICE_CAP)
                share = shares[b] * np.exp(0.05 * rng.standard_normal(n))
                sp.append(prices)
                sq.append(total * share / share.sum())
            sp = np.round(np.concatenate(sp), 2)
            sq = np.maximum(np.round(np.concatenate(sq), 1), 0.1)

            pump = 1200.0 * solar_shape[h] * clearness[d]
            inelastic = 0.9 * load
            elastic = load - inelastic
            dp = np.concatenate(
                [
                    np.full(4, PRICE_CAP),
                    np.clip(20.0 + 240.0 * u[7] + jit * rng.standard_normal(n), 0.0, PRICE_CAP),
                    rng.uniform(5.0, 60.0, 4),
                ]
            )
            dshare = shares[7] * np.exp(0.05 * rng.standard_normal(n))
            dq = np.concatenate(
                [
                    np.full(4, inelastic / 4),
                    elastic * dshare / dshare.sum(),
                    np.full(4, pump / 4 + 1.0),
                ]
            )
            dp = np.round(dp, 2)
            dq = np.maximum(np.round(dq, 1), 0.1)

            coupling = CouplingRecord(ts, round(max(imports, 0.0), 1), round(exports, 1))
            snapshots.append(MarketSnapshot(ts, sp, sq, dp, dq, coupling))
            exogenous.append(
                ExogenousRecord(ts, round(load_fc, 1), round(ntc_fr, 1), round(ntc_ch, 1), round(res_fc, 1))
            )
    return snapshots, exogenous


def write_dataset(directory, snapshots, exogenous) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "orders": directory / "orders.csv",
        "exogenous": directory / "exogenous.csv",
        "coupling": directory / "coupling.csv",
    }
    write_order_book(paths["orders"], snapshots)
    write_exogenous(paths["exogenous"], exogenous)
    write_coupling(paths["coupling"], snapshots)
    return paths
