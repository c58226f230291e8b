"""Finite-dimensional representations of supply/demand curve pairs."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .fpca import FpcaBasis, RankError, fit_fpca, knee_point, select_num_components, threshold_components
from .isotonic import enforce_monotonicity, is_monotone, pava
from .zst import GridConstructionError, ZstBasis, fit_zst, zst_project, zst_reconstruct

Basis = Union[FpcaBasis, ZstBasis]


@dataclass(frozen=True)
class CurvePairBasis:
    """Supply and demand bases whose vectors are concatenated
    ``[supply..., demand...]``."""

    supply: Basis
    demand: Basis

    @property
    def n_supply(self) -> int:
        return self.supply.n_components

    @property
    def n_demand(self) -> int:
        return self.demand.n_components

    @property
    def dim(self) -> int:
        return self.n_supply + self.n_demand

    def project(self, supply_curves, demand_curves) -> np.ndarray:
        return np.concatenate([self.supply.project(supply_curves), self.demand.project(demand_curves)], axis=-1)

    def project_delta(self, supply_deltas, demand_deltas) -> np.ndarray:
        return np.concatenate(
            [self.supply.project_delta(supply_deltas), self.demand.project_delta(demand_deltas)], axis=-1
        )

    def reconstruct(self, vectors) -> tuple[np.ndarray, np.ndarray]:
        v = np.asarray(vectors, dtype=float)
        if v.shape[-1] != self.dim:
            raise ValueError(f"expected {self.dim} values, got {v.shape[-1]}")
        return self.supply.reconstruct(v[..., : self.n_supply]), self.demand.reconstruct(v[..., self.n_supply :])

    def reconstruct_delta(self, vectors) -> tuple[np.ndarray, np.ndarray]:
        v = np.asarray(vectors, dtype=float)
        if v.shape[-1] != self.dim:
            raise ValueError(f"expected {self.dim} values, got {v.shape[-1]}")
        return (
            self.supply.reconstruct_delta(v[..., : self.n_supply]),
            self.demand.reconstruct_delta(v[..., self.n_supply :]),
        )

    @property
    def grid(self):
        return self.supply.grid

    def to_dict(self) -> dict:
        return {"supply": self.supply.to_dict(), "demand": self.demand.to_dict()}


def project(supply_curves, demand_curves, bases: CurvePairBasis) -> np.ndarray:
    return bases.project(supply_curves, demand_curves)


def reconstruct(vectors, bases: CurvePairBasis) -> tuple[np.ndarray, np.ndarray]:
    return bases.reconstruct(vectors)


def export_bases(bases: CurvePairBasis, path) -> Path:
    """Write the bases as one JSON document (mean, components, eigenvalues
    or price classes, per side)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(bases.to_dict(), indent=1), encoding="utf-8")
    return path


__all__ = [
    "Basis",
    "CurvePairBasis",
    "FpcaBasis",
    "GridConstructionError",
    "RankError",
    "ZstBasis",
    "enforce_monotonicity",
    "export_bases",
    "fit_fpca",
    "fit_zst",
    "is_monotone",
    "knee_point",
    "pava",
    "project",
    "reconstruct",
    "select_num_components",
    "threshold_components",
    "zst_project",
    "zst_reconstruct",
]
