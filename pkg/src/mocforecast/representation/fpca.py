"""Functional PCA of curves sampled on a uniform grid.

Inner products use trapezoidal weights, so components are orthonormal as
functions (``sum_i w_i phi_k(p_i) phi_l(p_i) = delta_kl``) rather than as
plain vectors.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.signal import argrelextrema

from ..smoothing import EvaluationGrid


class RankError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FpcaBasis:
    side: str
    grid: EvaluationGrid
    mean: np.ndarray
    components: np.ndarray  # (K, G)
    eigenvalues: np.ndarray  # (K,)
    spectrum: np.ndarray  # every eigenvalue, descending

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def explained_ratio(self) -> np.ndarray:
        total = self.spectrum.sum()
        if total <= 0:
            return np.zeros_like(self.spectrum)
        return self.spectrum / total

    @property
    def weights(self) -> np.ndarray:
        return self.grid.trapezoid_weights()

    def truncate(self, k: int) -> "FpcaBasis":
        if not 1 <= k <= self.spectrum.size:
            raise ValueError(f"cannot keep {k} of {self.spectrum.size} components")
        if k > self.n_components:
            raise ValueError("basis was fitted with fewer components")
        return FpcaBasis(self.side, self.grid, self.mean, self.components[:k], self.eigenvalues[:k], self.spectrum)

    def project_delta(self, deltas) -> np.ndarray:
        """Scores of mean-free curve increments."""
        deltas = np.asarray(deltas, dtype=float)
        if deltas.shape[-1] != self.grid.size:
            raise ValueError(f"expected curves on {self.grid.size} grid points, got {deltas.shape[-1]}")
        return (deltas * self.weights) @ self.components.T

    def project(self, curves) -> np.ndarray:
        return self.project_delta(np.asarray(curves, dtype=float) - self.mean)

    def reconstruct(self, scores) -> np.ndarray:
        return self.mean + self.reconstruct_delta(scores)

    def reconstruct_delta(self, scores) -> np.ndarray:
        """Linear part of :meth:`reconstruct` (no mean)."""
        scores = np.asarray(scores, dtype=float)
        if scores.shape[-1] != self.n_components:
            raise ValueError(f"expected {self.n_components} scores, got {scores.shape[-1]}")
        return scores @ self.components

    def to_dict(self) -> dict:
        return {
            "kind": "fpca",
            "side": self.side,
            "grid": self.grid.prices.tolist(),
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "explained_ratio": self.explained_ratio[: self.n_components].tolist(),
        }

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for a in (self.mean, self.components, self.eigenvalues):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()[:16]


def fit_fpca(
    curves,
    grid: EvaluationGrid,
    side: str = "supply",
    n_components: int | None = None,
    threshold: float = 0.99,
    scree_length: int = 20,
) -> FpcaBasis:
    """Eigen-decompose the sample covariance operator of ``curves`` (T, G).

    With ``n_components=None`` the number kept is chosen by
    :func:`select_num_components`.
    """
    x = np.asarray(curves, dtype=float)
    if x.ndim != 2 or x.shape[1] != grid.size:
        raise ValueError("curves must be (T, G) on the grid")
    t = x.shape[0]
    if t < 2:
        raise RankError("need at least two curves")
    mean = x.mean(axis=0)
    sw = np.sqrt(grid.trapezoid_weights())
    c = (x - mean) * sw
    cov = c.T @ c / (t - 1)
    vals, vecs = np.linalg.eigh(cov)
    vals = np.clip(vals[::-1], 0.0, None)
    vecs = vecs[:, ::-1]
    comps = (vecs / sw[:, None]).T
    # sign: positive integral, else positive first non-negligible entry
    w = grid.trapezoid_weights()
    integ = comps @ w
    flip = integ < 0
    tiny = np.abs(integ) < 1e-10 * np.abs(comps).sum(axis=1) * grid.spacing
    if tiny.any():
        lead = comps[np.arange(comps.shape[0]), np.argmax(np.abs(comps) > 1e-12, axis=1)]
        flip = np.where(tiny, lead < 0, flip)
    comps[flip] *= -1
    k = n_components if n_components is not None else select_num_components(vals, threshold, scree_length)
    k = int(min(max(k, 1), comps.shape[0]))
    return FpcaBasis(side, grid, mean, comps[:k].copy(), vals[:k].copy(), vals)


def threshold_components(eigenvalues, threshold: float = 0.99) -> int:
    ev = np.clip(np.asarray(eigenvalues, dtype=float), 0.0, None)
    total = ev.sum()
    if total <= 0:
        return 1
    cum = np.cumsum(ev) / total
    # guard against cumulative round-off just under the threshold
    return int(np.argmax(cum >= threshold - 1e-12) + 1)


def knee_point(values, sensitivity: float = 1.0) -> int | None:
    """Kneedle knee of a decreasing convex curve, as a 1-based index.

    Offline variant: the first knee found is returned, ``None`` when the
    difference curve never drops below a threshold.
    """
    y = np.asarray(values, dtype=float)
    n = y.size
    if n < 3:
        return None
    x = np.arange(1, n + 1, dtype=float)
    xn = (x - x[0]) / (x[-1] - x[0])
    span = y.max() - y.min()
    if span <= 0:
        return None
    yn = (y - y.min()) / span
    yn = yn.max() - yn
    diff = yn - xn
    maxima = argrelextrema(diff, np.greater_equal)[0]
    minima = argrelextrema(diff, np.less_equal)[0]
    if maxima.size == 0:
        return None
    thresholds = diff[maxima] - sensitivity * np.abs(np.diff(xn).mean())
    threshold, threshold_index, mi = 0.0, 0, 0
    for i in range(maxima[0], n - 1):
        if i in maxima:
            threshold = thresholds[mi]
            threshold_index = i
            mi += 1
        if i in minima:
            threshold = 0.0
        if diff[i + 1] < threshold:
            return int(x[threshold_index])
    return None


def select_num_components(eigenvalues, threshold: float = 0.99, scree_length: int = 20) -> int:
    """Larger of the scree-plot knee and the explained-variance threshold,
    capped at the number of non-zero eigenvalues.

    The knee is searched on the leading ``scree_length`` eigenvalues.
    """
    ev = np.clip(np.asarray(eigenvalues, dtype=float), 0.0, None)
    if ev.size < 2:
        raise ValueError("need at least two eigenvalues")
    k_thr = threshold_components(ev, threshold)
    k_knee = knee_point(ev[:scree_length]) or 1
    # zero-variance directions explain nothing, whatever the knee says
    rank = int(np.count_nonzero(ev > 1e-12 * ev.max())) if ev.max() > 0 else 1
    return max(min(max(k_knee, k_thr), rank), 1)
