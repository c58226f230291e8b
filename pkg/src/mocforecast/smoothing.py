"""Nadaraya-Watson smoothing of curves sampled on a uniform price grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .curves import StepCurve


class SmoothingError(ValueError):
    pass


class DegenerateSmootherError(SmoothingError):
    pass


@dataclass(frozen=True, eq=False)
class EvaluationGrid:
    prices: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.prices, dtype=float)
        if p.ndim != 1 or p.size < 50:
            raise SmoothingError("grid needs at least 50 points")
        steps = np.diff(p)
        if not np.all(steps > 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
            raise SmoothingError("grid must be uniform and increasing")
        p.setflags(write=False)
        object.__setattr__(self, "prices", p)

    @classmethod
    def uniform(cls, p_min: float = 0.0, p_max: float = 300.0, size: int = 301) -> "EvaluationGrid":
        return cls(np.linspace(p_min, p_max, size))

    @property
    def size(self) -> int:
        return self.prices.size

    @property
    def spacing(self) -> float:
        return float(self.prices[1] - self.prices[0])

    @property
    def bounds(self) -> tuple[float, float]:
        return float(self.prices[0]), float(self.prices[-1])

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.size, self.spacing)
        w[[0, -1]] *= 0.5
        return w

    def __eq__(self, other):
        return isinstance(other, EvaluationGrid) and np.array_equal(self.prices, other.prices)

    def __hash__(self):
        return hash((self.size, *self.bounds))


@dataclass(frozen=True, eq=False)
class SmoothCurve:
    grid: EvaluationGrid
    values: np.ndarray
    side: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.size,):
            raise SmoothingError("values must match the grid")
        if not np.all(np.isfinite(v)):
            raise SmoothingError("non-finite curve values")
        object.__setattr__(self, "values", v)

    def __call__(self, p):
        return np.interp(p, self.grid.prices, self.values)


def smoother_matrix(grid: EvaluationGrid, bandwidth: float) -> np.ndarray:
    """Row-normalised Gaussian weights ``L[i, j] = K_h(p_i - p_j) / sum_j``."""
    if not bandwidth > 0:
        raise SmoothingError(f"bandwidth must be positive, got {bandwidth}")
    p = grid.prices
    w = np.exp(-0.5 * ((p[:, None] - p[None, :]) / bandwidth) ** 2)
    return w / w.sum(axis=1, keepdims=True)


def nadaraya_watson(raw, grid: EvaluationGrid, bandwidth: float) -> np.ndarray:
    """Smooth grid evaluations; ``raw`` is ``(G,)`` or ``(n, G)``."""
    raw = np.asarray(raw, dtype=float)
    return raw @ smoother_matrix(grid, bandwidth).T


def smooth_curve(curve: StepCurve, grid: EvaluationGrid, bandwidth: float) -> SmoothCurve:
    return SmoothCurve(grid, nadaraya_watson(curve(grid.prices), grid, bandwidth), curve.side)


def gcv_scores(raw, grid: EvaluationGrid, bandwidths) -> np.ndarray:
    """GCV criterion ``G * RSS / (G - tr L)^2`` for each bandwidth.

    ``raw`` may hold several curves (rows); the result then has one row per
    curve. Bandwidths whose smoother has trace ~ G score ``inf``.
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    g = grid.size
    out = np.empty((raw.shape[0], len(bandwidths)))
    for k, h in enumerate(bandwidths):
        L = smoother_matrix(grid, h)
        dof = g - np.trace(L)
        resid = raw - raw @ L.T
        rss = np.einsum("ij,ij->i", resid, resid)
        out[:, k] = g * rss / dof**2 if dof > 1e-8 * g else np.inf
    return out


def select_bandwidth_gcv(raw, grid: EvaluationGrid, candidates) -> float:
    """GCV-optimal bandwidth for one curve ``(G,)``; ties go to the smaller
    bandwidth. For a stack of curves use :func:`select_bandwidth_many`."""
    cands = np.asarray(candidates, dtype=float)
    if cands.size < 2 or np.any(cands <= 0):
        raise SmoothingError("need at least two positive candidate bandwidths")
    scores = gcv_scores(np.asarray(raw, dtype=float).reshape(1, -1), grid, cands)[0]
    return _argmin_smallest(cands, scores)


def _argmin_smallest(cands, scores) -> float:
    if not np.isfinite(scores).any():
        raise DegenerateSmootherError("every candidate smoother interpolates the data")
    best = np.nanmin(scores)
    return float(np.min(cands[scores == best]))


def select_bandwidth_many(raw, grid: EvaluationGrid, candidates) -> float:
    """Median of per-curve GCV choices (one global bandwidth per fit)."""
    cands = np.asarray(candidates, dtype=float)
    if cands.size < 2 or np.any(cands <= 0):
        raise SmoothingError("need at least two positive candidate bandwidths")
    scores = gcv_scores(raw, grid, cands)
    chosen = [_argmin_smallest(cands, row) for row in scores]
    # lower median keeps the result on the candidate list
    return float(np.sort(chosen)[(len(chosen) - 1) // 2])


def default_bandwidths() -> np.ndarray:
    return np.geomspace(0.5, 50.0, 10)
