"""Regularized critical measures on the grid.

Three kinds are built from a field ladder at scale j, all in the
exact-variance convention (sigma^2_j in place of ln(1/eps_j)):

  SENETA_HEYDE   sqrt(sigma^2_j) e^{2X_j - 2 sigma^2_j} dx
  DERIVATIVE     (2 sigma^2_j - X_j) e^{2X_j - 2 sigma^2_j} dx  (signed pre-limit)
  TRUNCATED      (2 sigma^2_j - X_j + beta) 1{barrier} e^{2X_j - 2 sigma^2_j} dx

The truncation barrier keeps the running ladder maximum of X_i - 2 sigma^2_i
at or below beta; cells that ever crossed it carry zero mass.  Cell mass is
the integrand at the cell center times the cell area.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError
from .field import FieldLadder, GridSpec

__all__ = [
    "GridMeasure",
    "seneta_heyde_measure",
    "derivative_measure",
    "truncated_measure",
    "measure_of_ball",
    "KIND_IDS",
]

SENETA_HEYDE = "SENETA_HEYDE"
DERIVATIVE = "DERIVATIVE"
TRUNCATED = "TRUNCATED"
KIND_IDS = {SENETA_HEYDE: 1, DERIVATIVE: 2, TRUNCATED: 3}


@dataclass
class GridMeasure:
    """Per-cell masses of one measure kind at one ladder scale."""

    kind: str
    j: int
    masses: np.ndarray  # (ny, nx)
    grid: GridSpec
    field: Optional[FieldLadder] = None
    beta: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KIND_IDS:
            raise DomainError(f"unknown measure kind {self.kind!r}")
        if self.kind != DERIVATIVE and np.any(self.masses < 0):
            raise DomainError(f"{self.kind} masses must be nonnegative")
        if not np.isfinite(self.masses).all():
            raise DomainError("measure has non-finite cells")
        self.masses.flags.writeable = False

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    @property
    def has_negative_cells(self) -> bool:
        return bool(np.any(self.masses < 0))

    def to_csv(self, path):
        xs, ys = self.grid.centers()
        with open(path, "w") as fh:
            fh.write("cell,x,y,mass\n")
            idx = 0
            for iy in range(self.grid.ny):
                for ix in range(self.grid.nx):
                    fh.write(f"{idx},{xs[ix]!r},{ys[iy]!r},{self.masses[iy, ix]!r}\n")
                    idx += 1


def _exp_weight(field: FieldLadder, j: int) -> np.ndarray:
    return np.exp(2.0 * field.fields[j] - 2.0 * field.variances[j])


def seneta_heyde_measure(field: FieldLadder, j: int) -> GridMeasure:
    """sqrt(sigma^2_j) e^{2X - 2 sigma^2} per cell (the sqrt(-ln eps) norming)."""
    if j < 1:
        raise DomainError("measures need scale j >= 1")
    masses = np.sqrt(field.variances[j]) * _exp_weight(field, j) * field.grid.cell_area
    return GridMeasure(kind=SENETA_HEYDE, j=j, masses=masses, grid=field.grid, field=field)


def derivative_measure(field: FieldLadder, j: int) -> GridMeasure:
    """(2 sigma^2_j - X_j) e^{2X - 2 sigma^2} per cell; cells may be negative."""
    if j < 1:
        raise DomainError("measures need scale j >= 1")
    masses = (2.0 * field.variances[j] - field.fields[j]) * _exp_weight(field, j) * field.grid.cell_area
    return GridMeasure(kind=DERIVATIVE, j=j, masses=masses, grid=field.grid, field=field)


def truncated_measure(field: FieldLadder, j: int, beta: float) -> GridMeasure:
    """Barrier-truncated derivative measure; nonnegative by construction."""
    if j < 1:
        raise DomainError("measures need scale j >= 1")
    if beta < 0:
        raise DomainError("barrier beta must be >= 0")
    keep = field.barrier_running_max(j) <= beta
    masses = (
        (2.0 * field.variances[j] - field.fields[j] + beta)
        * keep
        * _exp_weight(field, j)
        * field.grid.cell_area
    )
    return GridMeasure(kind=TRUNCATED, j=j, masses=masses, grid=field.grid, field=field, beta=beta)


def measure_of_ball(m: GridMeasure, x, r: float) -> float:
    """Mass of cells whose centers lie in the closed ball B(x, r)."""
    if not r > 0:
        raise DomainError("ball radius must be positive")
    xs, ys = m.grid.centers()
    cx = float(np.asarray(x, dtype=float)[0])
    cy = float(np.asarray(x, dtype=float)[1])
    # trim to the bounding square before forming the distance mask
    ix = np.nonzero(np.abs(xs - cx) <= r)[0]
    iy = np.nonzero(np.abs(ys - cy) <= r)[0]
    if ix.size == 0 or iy.size == 0:
        return 0.0
    sub = m.masses[np.ix_(iy, ix)]
    d2 = (xs[ix][None, :] - cx) ** 2 + (ys[iy][:, None] - cy) ** 2
    return float(sub[d2 <= r * r].sum())
