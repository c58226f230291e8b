"""Pool-adjacent-violators projection onto monotone sequences."""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _pava_inplace(y, w, out):
    n = y.shape[0]
    # block means, weights, and lengths on a stack
    mean = np.empty(n)
    weight = np.empty(n)
    length = np.empty(n, dtype=np.int64)
    top = -1
    for i in range(n):
        top += 1
        mean[top] = y[i]
        weight[top] = w[i]
        length[top] = 1
        while top > 0 and mean[top - 1] > mean[top]:
            tw = weight[top - 1] + weight[top]
            mean[top - 1] = (weight[top - 1] * mean[top - 1] + weight[top] * mean[top]) / tw
            weight[top - 1] = tw
            length[top - 1] += length[top]
            top -= 1
    k = 0
    for b in range(top + 1):
        for _ in range(length[b]):
            out[k] = mean[b]
            k += 1


@njit(cache=True, nogil=True)
def _pava_rows(y, w, out):
    for r in range(y.shape[0]):
        _pava_inplace(y[r], w, out[r])


def pava(values, weights=None, increasing: bool = True) -> np.ndarray:
    """Weighted L2 projection onto non-decreasing (or non-increasing) vectors.

    ``values`` may be 1-D or 2-D; rows of a 2-D array are projected
    independently with shared weights.
    """
    y = np.asarray(values, dtype=float)
    squeeze = y.ndim == 1
    y2 = np.atleast_2d(y)
    if not increasing:
        y2 = -y2
    y2 = np.ascontiguousarray(y2)
    w = np.ones(y2.shape[1]) if weights is None else np.ascontiguousarray(weights, dtype=float)
    out = np.empty_like(y2)
    _pava_rows(y2, w, out)
    if not increasing:
        out = -out
    return out[0] if squeeze else out


def is_monotone(values, increasing: bool = True) -> np.ndarray:
    d = np.diff(np.atleast_2d(values), axis=-1)
    return np.all(d >= 0, axis=-1) if increasing else np.all(d <= 0, axis=-1)


def enforce_monotonicity(curve, side: str | None = None):
    """Monotone projection of a curve: non-decreasing for supply,
    non-increasing for demand.

    Accepts a :class:`~mocforecast.smoothing.SmoothCurve` or an array of
    grid values (then ``side`` is required). Rows already monotone are
    returned untouched.
    """
    from ..smoothing import SmoothCurve

    if isinstance(curve, SmoothCurve):
        vals = enforce_monotonicity(curve.values, curve.side)
        return SmoothCurve(curve.grid, vals, curve.side)
    if side not in ("supply", "demand"):
        raise ValueError("side must be 'supply' or 'demand'")
    inc = side == "supply"
    vals = np.asarray(curve, dtype=float)
    rows = np.atleast_2d(vals)
    bad = ~is_monotone(rows, inc)
    if not bad.any():
        return vals.copy()
    fixed = rows.copy()
    fixed[bad] = pava(rows[bad], increasing=inc)
    return fixed[0] if vals.ndim == 1 else fixed
