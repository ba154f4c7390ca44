"""Trajectory reconstruction and error metrics against the exact reference.

The trained network predicts the smooth part Y; the solution itself is
reconstructed as

    Xbar(t) = Nbar(w*, t, mesh values) + sigma L(t),

which needs the exact path value at t - hence evaluation times live on a
mesh nested in the 2^17 reference mesh, where L is known exactly.  With
sigma = 0 this degrades gracefully to a classical PINN evaluation.

Errors over M fresh paths (everything accumulated in double precision):

    err_time     = sqrt( mean_i (T/n) sum_{j=1..n} |Xbar_i(t_j) - X_i(t_j)|^2 )
    err_terminal = sqrt( mean_i |Xbar_i(T) - X_i(T)|^2 )

against the Euler-Maruyama reference on the fine mesh, subsampled.  The
same paths also score the zero-knowledge baseline x0 + sigma L(t).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import head_forward_batch, path_features
from .paths import TimeGrid, derive_seed, sample_levy_path, subsample_path
from .solvers import REFERENCE_EXPONENT, euler_maruyama_stack, reference_grid

EVAL_CHUNK = 128  # paths advanced together; fixed so runs are bit-reproducible


@dataclass(frozen=True)
class ErrorReport:
    n: int  # evaluation mesh size
    paths: int  # M
    seed: int
    err_time: float
    err_terminal: float
    baseline_err_time: float
    baseline_err_terminal: float
    # per-path squared contributions, kept so aggregates can be recomputed exactly
    per_path_time_sq: np.ndarray = None
    per_path_terminal_sq: np.ndarray = None


def reconstruct_x(model, path, t, interpolate=False):
    """Xbar(t) = Nbar(t) + sigma L(t) for one mesh path, shape (d,).

    t must be a mesh point, where L(t) is known exactly; off-mesh times are
    refused unless `interpolate=True`, which substitutes the bridge-mean
    (linear) interpolation of L between its bracketing mesh values.
    """
    grid = path.grid
    if grid != model.grid:
        raise ValueError("path is not sampled on the model's information mesh")
    points = grid.points
    j = int(np.searchsorted(points, t))
    if j <= grid.n and points[j] == t:
        l_t = path.values[j]
    elif not interpolate:
        raise ValueError(
            f"t={t} is not a mesh point; pass interpolate=True to accept bridge-mean interpolation"
        )
    else:
        if not 0.0 <= t <= grid.horizon:
            raise ValueError(f"t={t} outside [0, {grid.horizon}]")
        l_t = path.values[j - 1] + (t - points[j - 1]) / grid.spacing * (
            path.values[j] - path.values[j - 1]
        )
    value = model.predict_values(np.array([t]), path)[0]
    return value + model.sde.sigma @ l_t


def baseline_predictor(sde, path, t, interpolate=False):
    """The no-training predictor x0 + sigma L(t); the natural comparison floor."""
    grid = path.grid
    points = grid.points
    j = int(np.searchsorted(points, t))
    if j <= grid.n and points[j] == t:
        l_t = path.values[j]
    elif not interpolate:
        raise ValueError(
            f"t={t} is not a mesh point; pass interpolate=True to accept bridge-mean interpolation"
        )
    else:
        if not 0.0 <= t <= grid.horizon:
            raise ValueError(f"t={t} outside [0, {grid.horizon}]")
        l_t = path.values[j - 1] + (t - points[j - 1]) / grid.spacing * (
            path.values[j] - path.values[j - 1]
        )
    return sde.x0 + sde.sigma @ l_t


def _model_predictions(model, mesh_features, eval_ts):
    """Nbar for every path row at every evaluation time; (count, K, d), float64."""
    count = mesh_features.shape[0]
    k = eval_ts.size
    ts = np.tile(eval_ts, count)
    features = np.repeat(mesh_features, k, axis=0)
    values, _, _ = head_forward_batch(model.params, model.head, ts, features)
    return values.reshape(count, k, -1).astype(np.float64)


def err_metrics(
    model,
    paths,
    seed,
    eval_grid=None,
    chunk_size=EVAL_CHUNK,
    predict_fn=None,
    ref_exponent=REFERENCE_EXPONENT,
):
    """Monte Carlo error report over `paths` fresh driving paths.

    Per path: sample the driving noise on the reference mesh, run
    Euler-Maruyama there, subsample both to the evaluation mesh, reconstruct
    Xbar from the model's mesh values, and accumulate squared gaps (double
    precision).  Path i is keyed by (seed, i), so reports are reproducible
    and independent of the chunk size.

    predict_fn, when given, replaces the model reconstruction; it receives
    (eval_ts, mesh_features, l_eval, x_ref) per chunk and must return Xbar
    of the same shape as x_ref.  (Used to validate the metric itself, e.g.
    feeding the reference back gives exactly zero error.)
    """
    sde = model.sde
    eval_grid = model.grid if eval_grid is None else eval_grid
    ref_grid = TimeGrid(2**ref_exponent, sde.horizon)
    if not ref_grid.refines(eval_grid):
        raise ValueError(f"evaluation mesh n={eval_grid.n} does not divide {ref_grid.n}")
    if not ref_grid.refines(model.grid):
        raise ValueError(f"information mesh n={model.grid.n} does not divide {ref_grid.n}")

    eval_idx = np.arange(0, ref_grid.n + 1, ref_grid.n // eval_grid.n)
    mesh_stride = ref_grid.n // model.grid.n
    eval_ts = eval_grid.points
    n_eval = eval_grid.n
    weight = sde.horizon / n_eval

    time_sq = np.empty(paths)
    terminal_sq = np.empty(paths)
    base_time_sq = np.empty(paths)
    base_terminal_sq = np.empty(paths)

    for start in range(0, paths, chunk_size):
        idx = range(start, min(start + chunk_size, paths))
        noise = np.stack(
            [sample_levy_path(sde.noise, ref_grid, derive_seed(seed, i)).values for i in idx]
        )
        x_ref = euler_maruyama_stack(sde, noise, ref_grid, keep=eval_idx)  # (c, K+1, d)
        l_eval = noise[:, eval_idx]  # (c, K+1, m)
        sigma_l = l_eval @ sde.sigma.T  # (c, K+1, d)
        mesh_features = noise[:, ::mesh_stride][:, 1:].reshape(len(idx), -1)
        if predict_fn is None:
            x_model = _model_predictions(model, mesh_features, eval_ts) + sigma_l
        else:
            x_model = predict_fn(eval_ts, mesh_features, l_eval, x_ref)
        x_base = sde.x0 + sigma_l

        gap_sq = np.sum((x_model - x_ref) ** 2, axis=2)  # (c, K+1)
        base_gap_sq = np.sum((x_base - x_ref) ** 2, axis=2)
        sl = slice(start, start + len(idx))
        time_sq[sl] = weight * gap_sq[:, 1:].sum(axis=1)
        terminal_sq[sl] = gap_sq[:, -1]
        base_time_sq[sl] = weight * base_gap_sq[:, 1:].sum(axis=1)
        base_terminal_sq[sl] = base_gap_sq[:, -1]

    return ErrorReport(
        n=n_eval,
        paths=paths,
        seed=seed,
        err_time=float(np.sqrt(time_sq.mean())),
        err_terminal=float(np.sqrt(terminal_sq.mean())),
        baseline_err_time=float(np.sqrt(base_time_sq.mean())),
        baseline_err_terminal=float(np.sqrt(base_terminal_sq.mean())),
        per_path_time_sq=time_sq,
        per_path_terminal_sq=terminal_sq,
    )


def write_error_csv(report, stream):
    stream.write(f"# seed={report.seed}\n")
    stream.write("n,M,err_time,err_terminal,baseline_err_time,baseline_err_terminal\n")
    stream.write(
        f"{report.n},{report.paths},{report.err_time:.17g},{report.err_terminal:.17g},"
        f"{report.baseline_err_time:.17g},{report.baseline_err_terminal:.17g}\n"
    )


def trajectory_dump(model, path_index, seed, stream):
    """Per-path diagnostic CSV: expected vs actual derivative and both trajectories.

    Columns: t, f_expected = f(t, Nbar, L(t)), dn_dt = d/dt Nbar, x_model, x_ref,
    on the model's mesh for the fresh path keyed by (seed, path_index).
    """
    sde = model.sde
    ref_grid = reference_grid(sde.horizon)
    fine = sample_levy_path(sde.noise, ref_grid, derive_seed(seed, path_index))
    mesh_path = subsample_path(fine, model.grid)
    eval_idx = np.arange(0, ref_grid.n + 1, ref_grid.n // model.grid.n)
    x_ref = euler_maruyama_stack(sde, fine.values[None], ref_grid, keep=eval_idx)[0]

    ts = model.grid.points
    values, dvalues, _ = head_forward_batch(
        model.params, model.head, ts, path_features(mesh_path)[None, :]
    )
    values = values.astype(np.float64)
    dvalues = dvalues.astype(np.float64)
    f_expected = model.rhs(ts, values, mesh_path.values)
    x_model = values + mesh_path.values @ sde.sigma.T

    stream.write(f"# seed={seed} path={path_index}\n")
    stream.write("t,f_expected,dn_dt,x_model,x_ref\n")
    for j, t in enumerate(ts):
        cols = [f_expected[j], dvalues[j], x_model[j], x_ref[j]]
        flat = ",".join(",".join(f"{v:.17g}" for v in col) for col in cols)
        stream.write(f"{t:.17g},{flat}\n")
