"""Reference integrators: Euler-Maruyama for the SDE, a classical one-step
method for the transformed random ODE, and exact subsampling between nested
meshes.

The "exact" solution used by every error metric is Euler-Maruyama on a
2^17-point mesh in double precision; coarser evaluation meshes must divide
it so trajectories restrict by plain row extraction with no interpolation.

Both integrators also come in a stacked form that advances a whole batch of
paths through the time loop at once (the computation is embarrassingly
parallel across paths), which is what the evaluation loop uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .paths import Cauchy, CompoundPoisson, LinearCombination, TimeGrid, Wiener

REFERENCE_EXPONENT = 17  # reference mesh size 2^17


def reference_grid(horizon):
    return TimeGrid(n=2**REFERENCE_EXPONENT, horizon=horizon)


@dataclass(frozen=True)
class Trajectory:
    grid: TimeGrid
    values: np.ndarray  # (n + 1, d)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        object.__setattr__(self, "values", values)
        if values.shape[0] != self.grid.n + 1:
            raise ValueError(f"{values.shape[0]} rows for a mesh of {self.grid.n + 1} points")

    @property
    def dim(self):
        return self.values.shape[1]


def subsample(trajectory, coarse_grid):
    """Restrict to a nested coarser mesh by exact row extraction."""
    if not trajectory.grid.refines(coarse_grid):
        raise ValueError(
            f"mesh n={trajectory.grid.n} (T={trajectory.grid.horizon}) does not refine "
            f"n={coarse_grid.n} (T={coarse_grid.horizon})"
        )
    stride = trajectory.grid.n // coarse_grid.n
    return Trajectory(grid=coarse_grid, values=trajectory.values[::stride].copy())


# ---------------------------------------------------------------------------
# Euler-Maruyama


def euler_maruyama_stack(sde, noise_values, grid, keep=None):
    """Euler-Maruyama over a stack of noise paths.

    noise_values: (count, n+1, m) mesh values of the driving paths.
    keep: optional sorted mesh indices to store (memory control for large
        meshes); default stores every step.
    Returns states of shape (count, len(keep), d), float64.
    """
    noise_values = np.asarray(noise_values, dtype=np.float64)
    count = noise_values.shape[0]
    n = grid.n
    if noise_values.shape[1] != n + 1:
        raise ValueError(f"paths have {noise_values.shape[1]} rows, mesh needs {n + 1}")
    h = grid.spacing
    ts = grid.points
    drift = sde.drift
    sigma_dl = np.diff(noise_values, axis=1) @ sde.sigma.T  # (count, n, d)

    keep = np.arange(n + 1) if keep is None else np.asarray(keep, dtype=np.int64)
    out = np.empty((count, keep.size, sde.dim))
    x = np.broadcast_to(sde.x0, (count, sde.dim)).copy()
    pos = 0
    if keep[pos] == 0:
        out[:, 0] = x
        pos = 1
    for j in range(n):
        x = x + drift(ts[j], x) * h + sigma_dl[:, j]
        if pos < keep.size and keep[pos] == j + 1:
            out[:, pos] = x
            pos += 1
    return out


def euler_maruyama(sde, fine_path):
    """X_{j+1} = X_j + a(t_j, X_j) h + sigma (L_{j+1} - L_j), X_0 = x0, double precision."""
    if fine_path.grid.horizon != sde.horizon:
        raise ValueError(
            f"path horizon {fine_path.grid.horizon} does not match SDE horizon {sde.horizon}"
        )
    if fine_path.dim != sde.noise_dim:
        raise ValueError(f"path dimension {fine_path.dim} vs sigma columns {sde.noise_dim}")
    states = euler_maruyama_stack(sde, fine_path.values[None], fine_path.grid)[0]
    return Trajectory(grid=fine_path.grid, values=states)


# ---------------------------------------------------------------------------
# Random-ODE integration (classical 4th-order one-step method)


def _is_continuous(kind):
    if isinstance(kind, Wiener):
        return True
    if isinstance(kind, LinearCombination):
        return all(_is_continuous(k) for _, k in kind.components)
    if isinstance(kind, (CompoundPoisson, Cauchy)):
        return False
    raise TypeError(f"not a noise kind: {kind!r}")


def noise_interpolation(kind):
    """In-step interpolation rule: 'linear' for continuous paths, 'left' for jumps."""
    return "linear" if _is_continuous(kind) else "left"


def integrate_rode_stack(rhs, noise_values, grid, y0, interpolation="linear"):
    """Classical RK4 for y' = f(t, y, L(t)) over a stack of noise paths.

    The driving path between mesh points is taken linear (continuous noise)
    or left-constant (cadlag jump noise); the mesh endpoint values are used
    exactly.  Returns (count, n+1, d).
    """
    if interpolation not in ("linear", "left"):
        raise ValueError(f"unknown interpolation {interpolation!r}")
    noise_values = np.asarray(noise_values, dtype=np.float64)
    count = noise_values.shape[0]
    n = grid.n
    if noise_values.shape[1] != n + 1:
        raise ValueError(f"paths have {noise_values.shape[1]} rows, mesh needs {n + 1}")
    h = grid.spacing
    ts = grid.points
    y0 = np.atleast_1d(np.asarray(y0, dtype=np.float64))
    d = y0.shape[0]

    l_left = noise_values[:, :-1]
    l_right = noise_values[:, 1:]
    l_mid = 0.5 * (l_left + l_right) if interpolation == "linear" else l_left

    out = np.empty((count, n + 1, d))
    y = np.broadcast_to(y0, (count, d)).copy()
    out[:, 0] = y
    half_h = 0.5 * h
    for j in range(n):
        t = ts[j]
        t_next = ts[j + 1]
        t_mid = 0.5 * (t + t_next)
        la, lm, lb = l_left[:, j], l_mid[:, j], l_right[:, j]
        k1 = rhs(t, y, la)
        k2 = rhs(t_mid, y + half_h * k1, lm)
        k3 = rhs(t_mid, y + half_h * k2, lm)
        k4 = rhs(t_next, y + h * k3, lb)
        y = y + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        out[:, j + 1] = y
    return out


def integrate_rode(rhs, path, y0):
    """Integrate the transformed equation along one sampled noise path."""
    interpolation = noise_interpolation(path.kind)
    states = integrate_rode_stack(rhs, path.values[None], path.grid, y0, interpolation)[0]
    return Trajectory(grid=path.grid, values=states)
