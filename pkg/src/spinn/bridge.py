"""Conditional (bridge) sampling of a Wiener path between its mesh values.

Given a path sampled on a mesh, the law of W(tau) conditioned on the mesh
values is Gaussian and depends only on the bracketing points t_j <= tau <=
t_{j+1}:

    mean = W(t_j) + (tau - t_j) / (t_{j+1} - t_j) * (W(t_{j+1}) - W(t_j))
    var  = (tau - t_j) * (t_{j+1} - tau) / (t_{j+1} - t_j)   (per coordinate)

Only Wiener paths admit this closed form here; for jump or heavy-tailed
noise use the mesh-point (grid) training loss instead of bridge sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .paths import Wiener


class BridgeUnsupportedError(TypeError):
    """Conditional sampling is only implemented for Wiener paths."""


@dataclass(frozen=True)
class BridgeDraw:
    tau: float
    value: np.ndarray  # shape (m,)
    mesh_hit: bool  # True when tau was a mesh point and the stored value was returned


def _bracket(grid, tau):
    """Index j with t_j <= tau <= t_{j+1}; tau == T brackets into the last cell."""
    if not (0.0 <= tau <= grid.horizon):
        raise ValueError(f"tau={tau} outside [0, {grid.horizon}]")
    j = int(np.searchsorted(grid.points, tau, side="right")) - 1
    return min(max(j, 0), grid.n - 1)


def _require_wiener(path):
    if not isinstance(path.kind, Wiener):
        raise BridgeUnsupportedError(
            f"bridge sampling needs a Wiener path, got {type(path.kind).__name__}; "
            "train with the grid loss for this noise"
        )


def brownian_bridge_mean_var(path, tau):
    """Conditional mean (m,) and per-coordinate variance of W(tau) given the mesh."""
    _require_wiener(path)
    j = _bracket(path.grid, tau)
    points = path.grid.points
    a, b = points[j], points[j + 1]
    left, right = path.values[j], path.values[j + 1]
    weight = (tau - a) / (b - a)
    mean = left + weight * (right - left)
    var = (tau - a) * (b - tau) / (b - a)
    return mean, float(var)


def sample_bridge(path, tau, rng):
    """One conditional draw of W(tau).

    An exact mesh hit returns the stored value deterministically, consuming
    no randomness; otherwise the draw is mean + sqrt(var) * z with z standard
    normal per coordinate.
    """
    _require_wiener(path)
    if not (0.0 <= tau <= path.grid.horizon):
        raise ValueError(f"tau={tau} outside [0, {path.grid.horizon}]")
    j = int(np.searchsorted(path.grid.points, tau, side="right")) - 1
    j = min(max(j, 0), path.grid.n - 1)
    for k in (j, j + 1):
        if tau == path.grid.points[k]:
            return BridgeDraw(tau=float(tau), value=path.values[k].copy(), mesh_hit=True)
    mean, var = brownian_bridge_mean_var(path, tau)
    value = mean + np.sqrt(var) * rng.standard_normal(path.dim)
    return BridgeDraw(tau=float(tau), value=value, mesh_hit=False)
