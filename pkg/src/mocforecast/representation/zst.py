"""Finite-difference representation on a data-driven price grid.

A curve is summarised by its values at ``K`` price classes ``pi_1 < ... <
pi_K``. The classes come from mapping an equispaced quantity grid through the
mean price curve (the inverse of the mean quantity curve), so price regions
where the mean curve is steep receive more classes. The vector is the first
difference of the sampled values, anchored at the training mean of
``Q(p_min)``.

Both directions are affine maps on the evaluation grid, built once per basis.
Classes are snapped to evaluation-grid prices so the round trip is exact
there.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ..smoothing import EvaluationGrid


class GridConstructionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ZstBasis:
    side: str
    grid: EvaluationGrid
    price_index: np.ndarray  # (K,) grid indices of the price classes
    anchor: float
    mean_quantity_curve: np.ndarray  # (G,)
    mean_price_curve: np.ndarray  # (M, 2) rows of (quantity, price)
    interpolation: np.ndarray  # (K, G) reconstruction weights of each level

    @property
    def n_components(self) -> int:
        return self.price_index.size

    @property
    def price_grid(self) -> np.ndarray:
        return self.grid.prices[self.price_index]

    def _check(self, curves) -> np.ndarray:
        curves = np.asarray(curves, dtype=float)
        if curves.shape[-1] != self.grid.size:
            raise ValueError(f"expected curves on {self.grid.size} grid points, got {curves.shape[-1]}")
        return curves

    def project(self, curves) -> np.ndarray:
        levels = self._check(curves)[..., self.price_index]
        return np.diff(levels, axis=-1, prepend=self.anchor)

    def project_delta(self, deltas) -> np.ndarray:
        levels = self._check(deltas)[..., self.price_index]
        return np.diff(levels, axis=-1, prepend=0.0)

    def reconstruct(self, vectors) -> np.ndarray:
        v = np.asarray(vectors, dtype=float)
        if v.shape[-1] != self.n_components:
            raise ValueError(f"expected {self.n_components} values, got {v.shape[-1]}")
        levels = self.anchor + np.cumsum(v, axis=-1)
        return levels @ self.interpolation

    def reconstruct_delta(self, vectors) -> np.ndarray:
        """Linear part of :meth:`reconstruct` (no anchor)."""
        v = np.asarray(vectors, dtype=float)
        if v.shape[-1] != self.n_components:
            raise ValueError(f"expected {self.n_components} values, got {v.shape[-1]}")
        return np.cumsum(v, axis=-1) @ self.interpolation

    def to_dict(self) -> dict:
        return {
            "kind": "zst",
            "side": self.side,
            "grid": self.grid.prices.tolist(),
            "price_grid": self.price_grid.tolist(),
            "anchor": self.anchor,
            "mean_quantity_curve": self.mean_quantity_curve.tolist(),
            "mean_price_curve": self.mean_price_curve.tolist(),
        }

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.price_index.tobytes())
        h.update(np.float64(self.anchor).tobytes())
        return h.hexdigest()[:16]


def _inverse_curves(grid_prices, curves, levels, side) -> np.ndarray:
    """Generalised inverses of monotone quantity curves ``(T, G)`` at
    ``levels``, one row per curve.

    Supply: lowest price reaching the level. Demand: highest price still
    holding it. Levels outside a curve's range clamp to the grid ends.
    """
    curves = np.atleast_2d(curves)
    if side == "supply":
        p, q = grid_prices, np.maximum.accumulate(curves, axis=1)
    else:
        p, q = grid_prices[::-1], np.maximum.accumulate(curves[:, ::-1], axis=1)
    t, g = q.shape
    # one searchsorted over all rows: shift each row above the previous one
    lo = min(q.min(), levels.min())
    span = max(q.max(), levels.max()) - lo + 1.0
    shift = span * np.arange(t)[:, None]
    flat = (q - lo + shift).ravel()
    idx = np.searchsorted(flat, (levels[None, :] - lo + shift).ravel(), side="left").reshape(t, -1)
    idx -= g * np.arange(t)[:, None]
    inner = np.clip(idx, 1, g - 1)
    rows = np.arange(t)[:, None]
    q0, q1 = q[rows, inner - 1], q[rows, inner]
    dq = q1 - q0
    lv = np.broadcast_to(levels, dq.shape)
    frac = np.divide(lv - q0, dq, out=np.ones_like(dq), where=dq > 0)
    out = p[inner - 1] + np.clip(frac, 0.0, 1.0) * (p[inner] - p[inner - 1])
    out = np.where(idx <= 0, p[0], out)
    return np.where(idx >= g, p[-1], out)


def _spread_indices(idx: np.ndarray, last: int) -> np.ndarray:
    """Make sorted grid indices strictly increasing within ``[0, last]``."""
    idx = idx.copy()
    for j in range(1, idx.size):
        idx[j] = max(idx[j], idx[j - 1] + 1)
    idx[-1] = last
    for j in range(idx.size - 2, -1, -1):
        idx[j] = min(idx[j], idx[j + 1] - 1)
    return idx


def _shape_weights(mean_q: np.ndarray, index: np.ndarray, g: int) -> np.ndarray:
    """Reconstruction weights: between classes ``j`` and ``j+1`` the curve
    moves from level ``j`` to ``j+1`` in proportion to the mean curve's
    movement; linearly in price where the mean curve is flat there."""
    k = index.size
    R = np.zeros((k, g))
    positions = np.arange(g)
    for j in range(k - 1):
        a, b = index[j], index[j + 1]
        seg = positions[a : b + 1]
        dq = mean_q[b] - mean_q[a]
        if abs(dq) > 1e-12 * max(1.0, abs(mean_q).max()):
            s = np.clip((mean_q[seg] - mean_q[a]) / dq, 0.0, 1.0)
        else:
            s = (seg - a) / (b - a)
        R[j, seg] = 1.0 - s
        R[j + 1, seg] = s
    return R


def fit_zst(
    curves,
    grid: EvaluationGrid,
    n_components: int,
    side: str = "supply",
    n_levels: int = 200,
) -> ZstBasis:
    """Build the price classes from training curves ``(T, G)``.

    The mean price curve averages the inverse curves of the training set on
    ``n_levels`` quantity levels spanning the mean curve's range.
    """
    x = np.asarray(curves, dtype=float)
    if x.ndim != 2 or x.shape[1] != grid.size:
        raise ValueError("curves must be (T, G) on the grid")
    k = int(n_components)
    if not 2 <= k <= grid.size:
        raise GridConstructionError(f"need 2 <= K <= {grid.size}, got {k}")
    if side not in ("supply", "demand"):
        raise ValueError("side must be 'supply' or 'demand'")
    p = grid.prices
    mean_q = x.mean(axis=0)
    anchor = float(mean_q[0])
    lo, hi = sorted((float(mean_q[0]), float(mean_q[-1])))
    if not hi > lo:
        raise GridConstructionError("mean quantity curve is flat over the price domain")
    levels = np.linspace(lo, hi, n_levels)
    mean_p = _inverse_curves(p, x, levels, side).mean(axis=0)
    if np.ptp(mean_p) < grid.spacing:
        raise GridConstructionError("mean price curve is flat")
    targets = np.interp(np.linspace(lo, hi, k), levels, mean_p)
    targets = np.sort(targets)
    targets[0], targets[-1] = p[0], p[-1]
    idx = np.clip(np.rint((targets - p[0]) / grid.spacing).astype(np.int64), 0, grid.size - 1)
    idx = _spread_indices(np.sort(idx), grid.size - 1)
    R = _shape_weights(mean_q, idx, grid.size)
    price_curve = np.column_stack([levels, mean_p])
    return ZstBasis(side, grid, idx, anchor, mean_q, price_curve, R)


def zst_project(curves, basis: ZstBasis) -> np.ndarray:
    return basis.project(curves)


def zst_reconstruct(vectors, basis: ZstBasis) -> np.ndarray:
    return basis.reconstruct(vectors)
