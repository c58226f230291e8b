"""Merit-order quantity curves and market clearing.

A quantity curve ``Q(p)`` is the unnormalised cdf of the offered volume over
price (supply) or its survival function (demand). Clearing finds the lowest
price where ``D(p) - S(p)`` stops being positive.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .market_data import PRICE_CAP, PRICE_FLOOR, SIDES, OrderRecord

logger = logging.getLogger(__name__)


class CurveError(ValueError):
    pass


class EmptyCurveError(CurveError):
    pass


class NoIntersectionError(CurveError):
    pass


@dataclass(frozen=True, eq=False)
class StepCurve:
    """Right-continuous (supply) or left-continuous (demand) step function.

    ``prices`` are strictly increasing breakpoints and ``quantities`` the
    curve value at each of them.
    """

    side: str
    prices: np.ndarray
    quantities: np.ndarray
    domain: tuple[float, float] = (PRICE_FLOOR, PRICE_CAP)

    def __post_init__(self):
        if self.side not in SIDES:
            raise CurveError(f"unknown side {self.side!r}")
        p = np.asarray(self.prices, dtype=float)
        q = np.asarray(self.quantities, dtype=float)
        if p.shape != q.shape or p.ndim != 1:
            raise CurveError("prices and quantities must be 1-D and aligned")
        if p.size > 1 and not np.all(np.diff(p) > 0):
            raise CurveError("breakpoint prices must be strictly increasing")
        for a in (p, q):
            a.setflags(write=False)
        object.__setattr__(self, "prices", p)
        object.__setattr__(self, "quantities", q)

    @classmethod
    def from_orders(cls, prices, quantities, side: str, domain=(PRICE_FLOOR, PRICE_CAP)) -> "StepCurve":
        prices = np.asarray(prices, dtype=float)
        quantities = np.asarray(quantities, dtype=float)
        if prices.size == 0:
            raise EmptyCurveError(f"no {side} orders")
        uniq, inv = np.unique(prices, return_inverse=True)
        mass = np.bincount(inv, weights=quantities, minlength=uniq.size)
        if side == "supply":
            cum = np.cumsum(mass)
        else:
            cum = np.cumsum(mass[::-1])[::-1]
        return cls(side, uniq, cum, domain)

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        if self.prices.size == 0:
            return np.zeros_like(p)
        if self.side == "supply":
            idx = np.searchsorted(self.prices, p, side="right") - 1
            vals = self.quantities[np.clip(idx, 0, None)]
            return np.where(idx >= 0, vals, 0.0)
        idx = np.searchsorted(self.prices, p, side="left")
        vals = self.quantities[np.clip(idx, None, self.prices.size - 1)]
        return np.where(idx < self.prices.size, vals, 0.0)

    @property
    def total(self) -> float:
        if self.prices.size == 0:
            return 0.0
        return float(self.quantities[-1] if self.side == "supply" else self.quantities[0])

    def is_monotone(self) -> bool:
        d = np.diff(self.quantities)
        return bool(np.all(d >= 0) if self.side == "supply" else np.all(d <= 0))

    def restrict(self, p_min: float, p_max: float) -> "StepCurve":
        return restrict_domain(self, p_min, p_max)

    def __eq__(self, other):
        if not isinstance(other, StepCurve):
            return NotImplemented
        return (
            self.side == other.side
            and tuple(self.domain) == tuple(other.domain)
            and np.array_equal(self.prices, other.prices)
            and np.array_equal(self.quantities, other.quantities)
        )


@dataclass(frozen=True)
class ClearingPoint:
    price: float
    quantity: float


def build_quantity_curve(orders: Sequence[OrderRecord], side: str) -> StepCurve:
    if not orders:
        raise EmptyCurveError(f"no {side} orders")
    if any(o.side != side for o in orders):
        raise CurveError(f"mixed sides in {side} curve")
    return StepCurve.from_orders([o.price for o in orders], [o.quantity for o in orders], side)


def restrict_domain(curve: StepCurve, p_min: float, p_max: float) -> StepCurve:
    """Keep the curve on ``[p_min, p_max]``; mass beyond the bounds collapses
    onto the boundary breakpoint so interior values are unchanged."""
    if not p_min < p_max:
        raise CurveError(f"empty domain [{p_min}, {p_max}]")
    p, q = curve.prices, curve.quantities
    if curve.side == "supply":
        inside = (p > p_min) & (p <= p_max)
        below = p <= p_min
        prices, quants = p[inside], q[inside]
        if below.any():
            prices = np.concatenate([[p_min], prices])
            quants = np.concatenate([[float(curve(p_min))], quants])
    else:
        inside = (p >= p_min) & (p < p_max)
        above = p >= p_max
        prices, quants = p[inside], q[inside]
        if above.any():
            prices = np.concatenate([prices, [p_max]])
            quants = np.concatenate([quants, [float(curve(p_max))]])
    return StepCurve(curve.side, prices, quants, (p_min, p_max))


def _check_sides(supply, demand):
    if supply.side != "supply" or demand.side != "demand":
        raise CurveError("clear_market expects (supply, demand)")


def clear_market(supply, demand) -> ClearingPoint:
    """Clearing point of a supply/demand pair.

    Step curves are cleared exactly: the price is the infimum of
    ``{p : D(p) <= S(p)}`` over the common domain. Curves sampled on a price
    grid (``SmoothCurve``) are cleared by linear interpolation between the
    two grid prices bracketing the sign change.
    """
    _check_sides(supply, demand)
    if isinstance(supply, StepCurve) and isinstance(demand, StepCurve):
        return _clear_steps(supply, demand)
    grid = np.asarray(supply.grid.prices)
    if not np.array_equal(grid, demand.grid.prices):
        raise CurveError("supply and demand must share the price grid")
    return clear_on_grid(grid, supply.values, demand.values)


def _clear_steps(supply: StepCurve, demand: StepCurve) -> ClearingPoint:
    lo = max(supply.domain[0], demand.domain[0])
    hi = min(supply.domain[1], demand.domain[1])
    knots = np.union1d(supply.prices, demand.prices)
    knots = np.union1d(knots[(knots > lo) & (knots < hi)], [lo, hi])
    # interleave knots with the midpoints of the open intervals between them
    probe = np.empty(2 * knots.size - 1)
    probe[0::2] = knots
    probe[1::2] = 0.5 * (knots[:-1] + knots[1:])
    diff = demand(probe) - supply(probe)
    if diff[0] <= 0:
        raise NoIntersectionError(f"supply covers demand already at {lo}")
    nonpos = diff <= 0
    if not nonpos.any():
        raise NoIntersectionError(f"demand exceeds supply on the whole domain up to {hi}")
    i = int(np.argmax(nonpos))
    crossings = np.count_nonzero(nonpos[1:] & ~nonpos[:-1])
    if crossings > 1:
        logger.info("%d sign changes of D-S, keeping the lowest", crossings)
    price = float(probe[i]) if i % 2 == 0 else float(probe[i - 1])
    qty = float(min(supply(price), demand(price)))
    return ClearingPoint(price, qty)


def clear_on_grid(grid, supply_values, demand_values) -> ClearingPoint:
    prices, quantities, ok = clear_on_grid_batch(grid, np.atleast_2d(supply_values), np.atleast_2d(demand_values))
    if not ok[0]:
        raise NoIntersectionError("no sign change of D-S on the grid")
    return ClearingPoint(float(prices[0]), float(quantities[0]))


def clear_on_grid_batch(grid, supply, demand):
    """Vectorised grid clearing for ``(n, G)`` curve matrices.

    Returns ``(prices, quantities, ok)``; rows without a sign change have
    ``ok = False`` and NaN outputs.
    """
    grid = np.asarray(grid, dtype=float)
    diff = np.asarray(demand, dtype=float) - np.asarray(supply, dtype=float)
    n = diff.shape[0]
    nonpos = diff <= 0
    first = np.argmax(nonpos, axis=1)
    ok = nonpos[np.arange(n), first] & (first > 0)
    prices = np.full(n, np.nan)
    quantities = np.full(n, np.nan)
    if not ok.any():
        return prices, quantities, ok
    rows = np.flatnonzero(ok)
    i = first[rows]
    d0 = diff[rows, i - 1]
    d1 = diff[rows, i]
    frac = np.where(d1 == 0, 1.0, d0 / (d0 - d1))
    g0, g1 = grid[i - 1], grid[i]
    prices[rows] = g0 + frac * (g1 - g0)
    s = np.asarray(supply, dtype=float)
    quantities[rows] = s[rows, i - 1] + frac * (s[rows, i] - s[rows, i - 1])
    many = np.count_nonzero(nonpos[rows, 1:] & ~nonpos[rows, :-1], axis=1) > 1
    if many.any():
        logger.debug("%d curve pairs with several D-S sign changes, kept the lowest", int(many.sum()))
    return prices, quantities, ok
