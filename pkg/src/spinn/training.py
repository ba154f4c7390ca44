"""Stochastic-gradient training of the pathwise solution network.

The theoretical objective is

    Lbar(y) = E[ |x0 - y(0)|^2 + T |y'(tau) - f(tau, y(tau), L(tau))|^2 ],

with tau ~ U(0, T) independent of the path L; by the freezing lemma it
equals the initial-condition term plus the time integral of the expected
squared residual, and the unique solution of the random ODE is its global
minimizer with value 0.  Training minimizes empirical single-sample
versions with the constrained head (whose initial-condition term vanishes
identically):

* bridge loss - residual at a uniformly drawn tau, with the unseen path
  value L(tau) replaced by one conditional (Brownian bridge) draw given the
  mesh values; unbiased for Wiener noise by the tower property;
* grid loss - left-point Riemann sum of the squared residual over the mesh
  itself, usable for any noise kind (jumps, heavy tails).

Updates are plain Robbins-Monro SGD, w <- w - eta_k * g_k, with the
power-law step eta_k = eta0 * (1+k)^(-gamma), gamma in (0.5, 1], so the
usual conditions sum eta = inf, sum eta^2 < inf hold.  A constant step is
allowed but flagged, since it violates those conditions.

One epoch = one batch of freshly sampled paths (and taus) = one update.
All per-epoch randomness is derived from the master seed and the epoch
index, so a fixed config reproduces the loss history bit for bit.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .bridge import sample_bridge
from .network import (
    Architecture,
    HeadBinding,
    MlpParams,
    bind_head,
    head_backward_batch,
    head_forward_batch,
    init_params,
    load_params,
    path_features,
    save_params,
)
from .paths import (
    PathSample,
    TimeGrid,
    Wiener,
    derive_seed,
    noise_from_jsonable,
    noise_to_jsonable,
    path_rng,
    sample_levy_path,
    sample_values_at,
)
from .sde import SdeSpec, drift_from_jsonable, drift_to_jsonable, make_rode_rhs

DIVERGENCE_LIMIT = 1e6

# spawn-key tags separating the independent randomness streams of a run
_INIT_STREAM = 0
_PATH_STREAM = 1
_AUX_STREAM = 2  # tau and bridge draws


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch}: batch loss {loss}")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class PowerDecay:
    """eta_k = eta0 * (1 + k)^(-gamma); gamma in (0.5, 1] keeps Robbins-Monro valid."""

    eta0: float = 1e-3
    gamma: float = 0.6

    robbins_monro = True

    def __post_init__(self):
        if not self.eta0 > 0:
            raise ValueError(f"eta0 must be > 0, got {self.eta0}")
        if not 0.5 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0.5, 1], got {self.gamma}")

    def rate(self, epoch):
        return self.eta0 * (1.0 + epoch) ** (-self.gamma)


@dataclass(frozen=True)
class ConstantRate:
    """Fixed step size; violates the Robbins-Monro conditions and is flagged as such."""

    eta0: float = 1e-3

    robbins_monro = False

    def __post_init__(self):
        if not self.eta0 > 0:
            raise ValueError(f"eta0 must be > 0, got {self.eta0}")

    def rate(self, epoch):
        return self.eta0


@dataclass(frozen=True)
class TrainConfig:
    sde: SdeSpec
    grid: object  # TimeGrid of the information mesh (n, T)
    epochs: int
    batch_size: int = 64
    schedule: object = PowerDecay()
    loss: str = "bridge"  # "bridge" | "grid"
    seed: int = 0
    precision: str = "single"
    width_cap: int = 512
    checkpoint_every: int = 0  # callback cadence in epochs; 0 = never

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.grid.horizon != self.sde.horizon:
            raise ValueError(
                f"mesh horizon {self.grid.horizon} does not match SDE horizon {self.sde.horizon}"
            )
        if self.loss not in ("bridge", "grid"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.loss == "bridge" and not isinstance(self.sde.noise, Wiener):
            raise ValueError(
                "the bridge loss needs Wiener noise (conditional law unknown otherwise); "
                "use loss='grid' for jump or heavy-tailed noise"
            )


@dataclass
class TrainedModel:
    params: MlpParams
    head: HeadBinding
    sde: SdeSpec
    grid: object
    loss_history: np.ndarray
    schedule: object
    loss_kind: str
    seed: int
    wall_time: float = 0.0
    rhs: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.rhs is None:
            self.rhs = make_rode_rhs(self.sde)

    def predict_values(self, ts, path):
        """Head predictions Nbar at the given times for one mesh path, shape (K, d)."""
        if path.grid != self.grid:
            raise ValueError("path is not sampled on the model's information mesh")
        values, _, _ = head_forward_batch(
            self.params, self.head, ts, path_features(path)[None, :]
        )
        return values.astype(np.float64)


def sgd_step(params, grads, eta):
    """One Robbins-Monro update w <- w - eta * g at the parameters' precision."""
    eta = params.dtype.type(eta)
    return MlpParams(
        weights=[w - eta * g for w, g in zip(params.weights, grads.weights)],
        biases=[b - eta * g for b, g in zip(params.biases, grads.biases)],
    )


# ---------------------------------------------------------------------------
# Empirical losses (single sample) and their batch gradients


def empirical_loss_bridge(params, head, tau, path, draw, rhs):
    """|Nbar(0) - x0|^2 + T |d/dt Nbar(tau) - f(tau, Nbar(tau), Ltilde(tau))|^2.

    With the constrained head the first term is identically zero, so only
    the residual term is accumulated.  `draw` is one conditional draw of
    the path at tau given its mesh values.
    """
    horizon = path.grid.horizon
    value, dvalue, _ = head_forward_batch(params, head, [tau], path_features(path)[None, :])
    value = value.astype(np.float64)
    dvalue = dvalue.astype(np.float64)
    residual = dvalue[0] - rhs(tau, value[0], np.asarray(draw.value, dtype=np.float64))
    return float(horizon * np.sum(residual**2))


def empirical_loss_grid(params, head, path, rhs):
    """|Nbar(0) - x0|^2 + (T/n) sum_j |d/dt Nbar(t_j) - f(t_j, Nbar(t_j), L(t_j))|^2.

    Left-point Riemann sum over j = 0..n-1 using the stored mesh values;
    works for every noise kind.  The first term vanishes by the head.
    """
    grid = path.grid
    ts = grid.points[:-1]
    value, dvalue, _ = head_forward_batch(params, head, ts, path_features(path)[None, :])
    value = value.astype(np.float64)
    dvalue = dvalue.astype(np.float64)
    residual = dvalue - rhs(ts, value, path.values[:-1])
    return float(grid.spacing * np.sum(residual**2))


def _residual_partials(rhs, ts, w_values, weight):
    """Partials of weight * sum_rows |dvalue - f(t, value, w)|^2 for the backward pass."""

    def partials(values, dvalues):
        residual = dvalues - rhs(ts, values, w_values)
        loss = weight * float(np.sum(residual**2))
        jac = rhs.jacobian_y(ts, values, w_values)  # (B, d, d)
        g_dvalue = (2.0 * weight) * residual
        g_value = (-2.0 * weight) * np.einsum("bij,bi->bj", jac, residual)
        return loss, g_value, g_dvalue

    return partials


def bridge_batch_gradient(params, head, batch, rhs):
    """Batch-mean bridge loss and its exact parameter gradient.

    batch: sequence of (tau, path, draw) triples.
    """
    horizon = batch[0][1].grid.horizon
    ts = np.array([tau for tau, _, _ in batch])
    features = np.stack([path_features(p) for _, p, _ in batch])
    w_values = np.stack([np.asarray(d.value, dtype=np.float64) for _, _, d in batch])
    values, dvalues, cache = head_forward_batch(params, head, ts, features)
    partials = _residual_partials(rhs, ts, w_values, weight=horizon / len(batch))
    loss, g_value, g_dvalue = partials(values.astype(np.float64), dvalues.astype(np.float64))
    grads = head_backward_batch(params, head, cache, g_value, g_dvalue)
    return loss, grads


def grid_batch_gradient(params, head, batch, rhs):
    """Batch-mean grid loss and gradient; one Riemann sum per path, averaged."""
    grads_w = None
    total = 0.0
    for path in batch:
        grid = path.grid
        ts = grid.points[:-1]
        values, dvalues, cache = head_forward_batch(
            params, head, ts, path_features(path)[None, :]
        )
        partials = _residual_partials(rhs, ts, path.values[:-1], weight=grid.spacing / len(batch))
        loss, g_value, g_dvalue = partials(
            values.astype(np.float64), dvalues.astype(np.float64)
        )
        grads = head_backward_batch(params, head, cache, g_value, g_dvalue)
        total += loss
        if grads_w is None:
            grads_w = grads
        else:
            grads_w = MlpParams(
                weights=[a + b for a, b in zip(grads_w.weights, grads.weights)],
                biases=[a + b for a, b in zip(grads_w.biases, grads.biases)],
            )
    return total, grads_w


# ---------------------------------------------------------------------------
# Training loop


def sample_epoch_batch(config, epoch):
    """The fresh (tau, path, draw) batch used at one epoch, reproducible by (seed, epoch).

    Per-element randomness is keyed by (master seed, stream, epoch, index),
    so the batch is independent of evaluation order and of every other
    epoch.  For the grid loss the taus/draws are simply not drawn.
    """
    horizon = config.grid.horizon
    batch = []
    for i in range(config.batch_size):
        path = sample_levy_path(
            config.sde.noise, config.grid, derive_seed(config.seed, _PATH_STREAM, epoch, i)
        )
        if config.loss == "bridge":
            aux = path_rng(derive_seed(config.seed, _AUX_STREAM, epoch, i))
            tau = horizon * aux.random()
            draw = sample_bridge(path, tau, aux)
            batch.append((tau, path, draw))
        else:
            batch.append(path)
    return batch


def train(config, checkpoint_callback=None):
    """Run the SGD loop and return the trained model with its loss history.

    Each epoch samples a fresh batch, averages the single-sample gradients,
    takes one scheduled step, and records the batch-mean loss (evaluated at
    the pre-step parameters).  A non-finite or absurdly large batch loss
    aborts with TrainingDiverged carrying the epoch index.
    """
    sde = config.sde
    rhs = make_rode_rhs(sde)
    head = bind_head(rhs, sde.x0)
    arch = Architecture.for_mesh(
        config.grid.n, sde.noise_dim, sde.dim, width_cap=config.width_cap
    )
    params = init_params(arch, derive_seed(config.seed, _INIT_STREAM), config.precision)

    history = np.empty(config.epochs)
    started = time.perf_counter()
    for epoch in range(config.epochs):
        batch = sample_epoch_batch(config, epoch)
        if config.loss == "bridge":
            loss, grads = bridge_batch_gradient(params, head, batch, rhs)
        else:
            loss, grads = grid_batch_gradient(params, head, batch, rhs)
        if not np.isfinite(loss) or loss > DIVERGENCE_LIMIT:
            raise TrainingDiverged(epoch, loss)
        params = sgd_step(params, grads, config.schedule.rate(epoch))
        history[epoch] = loss
        if (
            checkpoint_callback is not None
            and config.checkpoint_every > 0
            and (epoch + 1) % config.checkpoint_every == 0
        ):
            checkpoint_callback(
                epoch,
                TrainedModel(
                    params=params.copy(),
                    head=head,
                    sde=sde,
                    grid=config.grid,
                    loss_history=history[: epoch + 1].copy(),
                    schedule=config.schedule,
                    loss_kind=config.loss,
                    seed=config.seed,
                    wall_time=time.perf_counter() - started,
                    rhs=rhs,
                ),
            )
    return TrainedModel(
        params=params,
        head=head,
        sde=sde,
        grid=config.grid,
        loss_history=history,
        schedule=config.schedule,
        loss_kind=config.loss,
        seed=config.seed,
        wall_time=time.perf_counter() - started,
        rhs=rhs,
    )


# ---------------------------------------------------------------------------
# Monte Carlo estimates of the theoretical loss (test oracles and audits)


def _path_with_point(kind, grid, tau, rng):
    """One path on the mesh plus the exact value L(tau), jointly distributed.

    Sampling runs over the union of the mesh and {tau}, so the returned
    mesh path and off-mesh value have exactly the right joint law.
    """
    points = grid.points
    j = int(np.searchsorted(points, tau))
    if j <= grid.n and points[j] == tau:
        values = sample_values_at(kind, points[1:], rng)
        full = np.concatenate((np.zeros((1, values.shape[1])), values))
        return full, full[j]
    # tau lies strictly inside (points[j-1], points[j]); splice it into the mesh times
    times = np.insert(points[1:], j - 1, tau)
    sampled = sample_values_at(kind, times, rng)
    at_tau = sampled[j - 1]
    mesh_rows = np.delete(sampled, j - 1, axis=0)
    full = np.concatenate((np.zeros((1, sampled.shape[1])), mesh_rows))
    return full, at_tau


def theoretical_loss_estimate(surrogate, rhs, x0, grid, kind, samples, seed):
    """Random-tau Monte Carlo estimate of Lbar for a pathwise surrogate.

    surrogate: callable(PathSample) -> (y, dy), each vectorized over a time
        array, returning (K, d).  The derivative route must be independent
        of the right-hand side being checked.
    Returns (estimate, standard_error) over `samples` i.i.d. (tau, path) pairs.
    """
    if samples < 2:
        raise ValueError("need at least 2 samples to report a standard error")
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    horizon = grid.horizon
    values = np.empty(samples)
    for i in range(samples):
        rng = path_rng(derive_seed(seed, i))
        tau = horizon * rng.random()
        mesh_values, l_tau = _path_with_point(kind, grid, tau, rng)
        path = PathSample(grid=grid, values=mesh_values, seed=derive_seed(seed, i), kind=kind)
        y, dy = surrogate(path)
        y_tau = np.atleast_2d(y(np.array([tau])))[0]
        dy_tau = np.atleast_2d(dy(np.array([tau])))[0]
        y_zero = np.atleast_2d(y(np.array([0.0])))[0]
        residual = dy_tau - rhs(tau, y_tau, l_tau)
        values[i] = np.sum((x0 - y_zero) ** 2) + horizon * np.sum(residual**2)
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(samples))


def theoretical_loss_quadrature(surrogate, rhs, x0, grid, kind, samples, seed):
    """Time-quadrature twin of `theoretical_loss_estimate` (freezing lemma).

    Replaces the random tau by a trapezoid rule over the mesh, with the
    path expectation still estimated by fresh sampled paths; both
    estimators are unbiased for the same quantity on Wiener noise.
    """
    if samples < 2:
        raise ValueError("need at least 2 samples to report a standard error")
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    ts = grid.points
    weights = np.full(grid.n + 1, grid.spacing)
    weights[0] = weights[-1] = 0.5 * grid.spacing
    values = np.empty(samples)
    for i in range(samples):
        path = sample_levy_path(kind, grid, derive_seed(seed, i))
        y, dy = surrogate(path)
        y_all = np.atleast_2d(y(ts))
        dy_all = np.atleast_2d(dy(ts))
        residual = dy_all - rhs(ts, y_all, path.values)
        y_zero = y_all[0]
        values[i] = np.sum((x0 - y_zero) ** 2) + np.sum(weights * np.sum(residual**2, axis=1))
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(samples))


# ---------------------------------------------------------------------------
# Persistence and the loss-history CSV


def save_model(file, model):
    """Self-describing checkpoint; write-then-read restores everything bit-exactly."""
    schedule = model.schedule
    meta = {
        "grid_n": model.grid.n,
        "horizon": model.grid.horizon,
        "loss": model.loss_kind,
        "seed": model.seed,
        "wall_time": model.wall_time,
        "schedule": {
            "kind": "power" if isinstance(schedule, PowerDecay) else "constant",
            "eta0": schedule.eta0,
            "gamma": getattr(schedule, "gamma", None),
        },
        "drift": drift_to_jsonable(model.sde.drift),
        "noise": noise_to_jsonable(model.sde.noise),
    }
    save_params(
        file,
        model.params,
        model.head,
        extra=meta,
        extra_arrays={
            "loss_history": np.asarray(model.loss_history, dtype=np.float64),
            "sigma": model.sde.sigma,
            "sde_x0": model.sde.x0,
        },
    )


def load_model(file):
    params, head, meta = load_params(file)
    with np.load(file, allow_pickle=False) as payload:
        loss_history = payload["loss_history"]
        sigma = payload["sigma"]
        sde_x0 = payload["sde_x0"]
    sched = meta["schedule"]
    schedule = (
        PowerDecay(eta0=sched["eta0"], gamma=sched["gamma"])
        if sched["kind"] == "power"
        else ConstantRate(eta0=sched["eta0"])
    )
    sde = SdeSpec(
        drift=drift_from_jsonable(meta["drift"]),
        sigma=sigma,
        x0=sde_x0,
        horizon=meta["horizon"],
        noise=noise_from_jsonable(meta["noise"]),
    )
    return TrainedModel(
        params=params,
        head=head,
        sde=sde,
        grid=TimeGrid(n=meta["grid_n"], horizon=meta["horizon"]),
        loss_history=loss_history,
        schedule=schedule,
        loss_kind=meta["loss"],
        seed=meta["seed"],
        wall_time=meta["wall_time"],
    )


def write_loss_csv(model, stream):
    """Loss history as `epoch,loss,eta` (1-based epochs), seed in the header."""
    stream.write(f"# seed={model.seed}\n")
    stream.write("epoch,loss,eta\n")
    for k, loss in enumerate(model.loss_history):
        stream.write(f"{k + 1},{loss:.17g},{model.schedule.rate(k):.17g}\n")
