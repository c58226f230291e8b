"""Variance-stabilising price transform: median/MAD scaling then asinh."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

# MAD of a standard normal, so the scale is consistent for Gaussian data
_MAD_NORMAL = float(norm.ppf(0.75))


class ScaleError(ValueError):
    pass


def asinh_transform(prices, median, mad):
    mad = np.asarray(mad, dtype=float)
    if np.any(mad <= 0) or not np.all(np.isfinite(mad)):
        raise ScaleError("scale must be positive and finite")
    return np.arcsinh((np.asarray(prices, dtype=float) - median) / mad)


def inverse_asinh_transform(values, median, mad):
    mad = np.asarray(mad, dtype=float)
    if np.any(mad <= 0) or not np.all(np.isfinite(mad)):
        raise ScaleError("scale must be positive and finite")
    return np.sinh(np.asarray(values, dtype=float)) * mad + median


@dataclass(frozen=True)
class AsinhScaler:
    """Per-column median and normal-consistent MAD; columns with zero MAD
    fall back to the standard deviation, then to 1."""

    median: np.ndarray
    mad: np.ndarray

    @classmethod
    def fit(cls, x, axis: int = 0) -> "AsinhScaler":
        x = np.asarray(x, dtype=float)
        med = np.median(x, axis=axis)
        mad = np.median(np.abs(x - np.expand_dims(med, axis)), axis=axis) / _MAD_NORMAL
        sd = np.std(x, axis=axis)
        mad = np.where(mad > 0, mad, np.where(sd > 0, sd, 1.0))
        return cls(np.asarray(med), np.asarray(mad))

    def transform(self, x):
        return asinh_transform(x, self.median, self.mad)

    def inverse(self, t):
        return inverse_asinh_transform(t, self.median, self.mad)
