"""Accuracy metrics for ABC posteriors: RMSE against the exact density and interval mass."""

from __future__ import annotations

import logging

import numpy as np

from ssm_abc.abc_engine import KdeEstimate
from ssm_abc.exact_oracle import PosteriorGrid

log = logging.getLogger(__name__)


def _grid_and_ordinates(density) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(density, KdeEstimate):
        return density.grid, density.ordinates
    if isinstance(density, PosteriorGrid):
        return density.param_nodes, density.normalized
    grid, ordinates = density
    return np.asarray(grid, float), np.asarray(ordinates, float)


def rmse(est: KdeEstimate, exact: PosteriorGrid) -> float:
    """Root mean squared difference of ordinates on the estimate's grid.

    The exact density is interpolated linearly onto the grid and taken as
    zero outside its own support.
    """
    grid, p_hat = _grid_and_ordinates(est)
    nodes, p = _grid_and_ordinates(exact)
    if grid[-1] < nodes[0] or grid[0] > nodes[-1]:
        raise ValueError("estimate and exact density have disjoint supports")
    p_on_grid = np.interp(grid, nodes, p, left=0.0, right=0.0)
    return float(np.sqrt(np.mean((p_hat - p_on_grid) ** 2)))


def node_widths(grid: np.ndarray) -> np.ndarray:
    """Rectangle width per node: forward gap, with the last node reusing the previous gap."""
    grid = np.asarray(grid, float)
    if len(grid) < 2:
        return np.ones_like(grid)
    gaps = np.diff(grid)
    return np.append(gaps, gaps[-1])


def interval_mass(density, lo: float, hi: float) -> float:
    """Rectangular-rule mass of the ordinates at nodes in [lo, hi), clipped to [0, 1]."""
    if not lo < hi:
        raise ValueError(f"need lo < hi, got ({lo}, {hi})")
    grid, p = _grid_and_ordinates(density)
    if lo < grid[0] or hi > grid[-1]:
        log.warning("interval (%g, %g) extends beyond the grid [%g, %g]; using the overlap",
                    lo, hi, grid[0], grid[-1])
    inside = (grid >= lo) & (grid < hi)
    mass = float(np.sum(p[inside] * node_widths(grid)[inside]))
    return min(max(mass, 0.0), 1.0)
