"""Axis-aligned occupancy grids over an agent's local neighborhood.

A grid covers a square of ``span x span`` scene units centered on the
agent, divided into ``m x m`` cells. Cell ``(a, b)``, with ``a, b`` in
``1..m``, counts the neighbors whose offset from the agent falls inside
it; ``a`` indexes the x direction and ``b`` the y direction. The grid is
stored as a flat vector of length ``m**2`` with cell ``(a, b)`` at index
``(a - 1) + m * (b - 1)``, so the serialized order enumerates ``a``
fastest. Cell intervals are half-open: lower edges inclusive, upper
edges exclusive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class GridConfig:
    """Grid geometry: ``m`` cells per side covering ``span`` units per side."""

    m: int = 4
    span: float = 80.0

    def __post_init__(self):
        if self.m < 1:
            raise ValidationError(f"grid cells per side must be >= 1, got {self.m}")
        if not self.span > 0:
            raise ValidationError(f"grid span must be > 0, got {self.span}")

    @property
    def cell_size(self) -> float:
        return self.span / self.m

    @property
    def n_cells(self) -> int:
        return self.m * self.m


def cell_index(dx: float, dy: float, cfg: GridConfig) -> tuple[int, int] | None:
    """1-based cell ``(a, b)`` containing the offset ``(dx, dy)``.

    Returns None when the offset lies outside the grid. Lower cell edges
    are inclusive and upper edges exclusive, so an offset of exactly
    ``span / 2`` is outside while ``-span / 2`` maps to the first cell.
    """
    half = cfg.span / 2.0
    a = math.floor((dx + half) / cfg.cell_size) + 1
    b = math.floor((dy + half) / cfg.cell_size) + 1
    if 1 <= a <= cfg.m and 1 <= b <= cfg.m:
        return a, b
    return None


def flat_index(a: int, b: int, m: int) -> int:
    """0-based storage index of the 1-based cell ``(a, b)``."""
    return (a - 1) + m * (b - 1)


def cell_coords(rel: np.ndarray, cfg: GridConfig):
    """Vectorized cell classification of relative offsets.

    Args:
        rel: array of offsets, shape ``(..., 2)``, finite values.

    Returns:
        ``(a, b, valid)`` where ``a`` and ``b`` are 1-based integer cell
        coordinates (arbitrary where ``valid`` is False) and ``valid``
        marks offsets that fall inside the grid.
    """
    half = cfg.span / 2.0
    # Coarse prefilter keeps the int cast safe for arbitrarily far offsets.
    near = (np.abs(rel[..., 0]) <= cfg.span) & (np.abs(rel[..., 1]) <= cfg.span)
    dx = np.where(near, rel[..., 0], 0.0)
    dy = np.where(near, rel[..., 1], 0.0)
    a = np.floor((dx + half) / cfg.cell_size).astype(np.int64) + 1
    b = np.floor((dy + half) / cfg.cell_size).astype(np.int64) + 1
    valid = near & (a >= 1) & (a <= cfg.m) & (b >= 1) & (b <= cfg.m)
    return a, b, valid


def occupancy_grid(agent_pos, neighbor_positions, cfg: GridConfig) -> np.ndarray:
    """Count neighbors per cell around ``agent_pos``.

    The neighbor list must exclude the agent itself; a neighbor exactly
    co-located with the agent still counts (in the cell containing the
    origin). Neighbors outside the span are ignored.
    """
    grid = np.zeros(cfg.n_cells)
    pts = np.asarray(neighbor_positions, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        return grid
    rel = pts - np.asarray(agent_pos, dtype=float)
    a, b, valid = cell_coords(rel, cfg)
    flat = (a[valid] - 1) + cfg.m * (b[valid] - 1)
    np.add.at(grid, flat, 1.0)
    return grid


def occupancy_grids(positions: np.ndarray, cfg: GridConfig) -> np.ndarray:
    """Occupancy grids for every agent of a joint configuration.

    Args:
        positions: ``(n, 2)`` array, one row per agent.

    Returns:
        ``(n, m**2)`` array; row ``i`` is agent ``i``'s grid built from
        all other rows.
    """
    pos = np.asarray(positions, dtype=float)
    n = pos.shape[0]
    d = cfg.n_cells
    if n == 0:
        return np.zeros((0, d))
    rel = pos[None, :, :] - pos[:, None, :]  # rel[i, j] = p_j - p_i
    a, b, valid = cell_coords(rel, cfg)
    valid = valid & ~np.eye(n, dtype=bool)
    flat = (a - 1) + cfg.m * (b - 1)
    combined = np.arange(n)[:, None] * d + flat
    counts = np.bincount(combined[valid].ravel(), minlength=n * d)
    return counts.reshape(n, d).astype(float)
