"""Scikit-learn style front end.

`SpinnRegressor` wraps problem definition + training behind the familiar
`fit` / `transform` / `predict` surface so the solver composes with
sklearn tooling (`clone`, `get_params`, grid search over `eta0`/`decay`,
...).  There is no training data in the usual sense - the sampler
generates its own driving paths - so `fit` ignores `X` and `y`.

`transform(X)` maps mesh noise values to the learned smooth part Y(t);
`predict(X)` adds sigma L(t) back, returning solution trajectories.
"""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .network import head_forward_batch
from .paths import TimeGrid, Wiener, derive_seed, sample_levy_path
from .sde import ExpressionDrift, SdeSpec
from .training import ConstantRate, PowerDecay, TrainConfig, train


def _as_noise_matrix(X, n, m):
    """Validate mesh noise values: (B, n+1) when m == 1, else (B, n+1, m)."""
    X = check_array(X, dtype=np.float64, allow_nd=True, ensure_2d=False)
    if X.ndim == 2 and m == 1:
        X = X[:, :, None]
    if X.ndim != 3 or X.shape[1] != n + 1 or X.shape[2] != m:
        raise ValueError(
            f"expected noise values of shape (B, {n + 1}) or (B, {n + 1}, {m}), got {X.shape}"
        )
    if np.any(X[:, 0] != 0.0):
        raise ValueError("driving paths must start at 0: first mesh value nonzero")
    return X


class SpinnRegressor(TransformerMixin, BaseEstimator):
    """Pathwise SDE solver: learns X(t) = Y(t) + sigma L(t) from physics alone.

    Parameters
    ----------
    drift : str or drift object
        Drift a(t, x); a string is parsed as an expression in t, x1..xd
        (e.g. ``"5*(0.4 - x1)"``).
    sigma : float or array-like
        Diffusion matrix (d, m); scalars mean the 1x1 matrix.
    x0 : float or array-like
        Initial condition.
    horizon : float
        Terminal time T.
    noise : noise-kind object or None
        Driving Levy process; None means a standard Wiener process of the
        dimension sigma expects.
    n_mesh : int
        Information-mesh size n (the network sees L at n+1 equidistant times).
    epochs, batch_size : int
        SGD steps (one batch per epoch) and paths per batch.
    eta0, decay : float
        Learning rate eta0 * (1 + k)^(-decay); decay=None uses a constant
        rate (and forfeits the Robbins-Monro guarantee).
    loss : "bridge" or "grid"
        Residual sampled at a conditional bridge point (Wiener only) or
        summed over the mesh.
    width_cap : int
        Hidden width is min(n * m, width_cap).
    precision : "single" or "double"
    random_state : int
        Master seed; fit is deterministic given it.

    Attributes
    ----------
    model_ : trained model (weights, head, problem, mesh)
    loss_history_ : per-epoch pre-step batch losses
    lipschitz, bound : optional drift metadata forwarded to string drifts
    """

    def __init__(
        self,
        drift="5*(0.4 - x1)",
        sigma=0.61,
        x0=-0.3,
        horizon=1.0,
        noise=None,
        n_mesh=512,
        epochs=2000,
        batch_size=64,
        eta0=1e-3,
        decay=0.6,
        loss="bridge",
        width_cap=512,
        precision="single",
        random_state=0,
        lipschitz=None,
        bound=None,
    ):
        self.drift = drift
        self.sigma = sigma
        self.x0 = x0
        self.horizon = horizon
        self.noise = noise
        self.n_mesh = n_mesh
        self.epochs = epochs
        self.batch_size = batch_size
        self.eta0 = eta0
        self.decay = decay
        self.loss = loss
        self.width_cap = width_cap
        self.precision = precision
        self.random_state = random_state
        self.lipschitz = lipschitz
        self.bound = bound

    def _build_sde(self):
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=np.float64))
        drift = self.drift
        if isinstance(drift, str):
            drift = ExpressionDrift(
                drift, dim=x0.size, lipschitz=self.lipschitz, bound=self.bound
            )
        noise = Wiener(sigma.shape[1]) if self.noise is None else self.noise
        return SdeSpec(drift=drift, sigma=sigma, x0=x0, horizon=self.horizon, noise=noise)

    def _build_config(self, sde):
        if self.decay is None:
            schedule = ConstantRate(self.eta0)
        elif isinstance(self.decay, numbers.Real):
            schedule = PowerDecay(self.eta0, float(self.decay))
        else:
            raise ValueError(f"decay must be a float or None, got {self.decay!r}")
        return TrainConfig(
            sde=sde,
            grid=TimeGrid(self.n_mesh, self.horizon),
            epochs=self.epochs,
            batch_size=self.batch_size,
            schedule=schedule,
            loss=self.loss,
            seed=self.random_state,
            precision=self.precision,
            width_cap=self.width_cap,
        )

    def fit(self, X=None, y=None):
        """Train on self-generated driving paths; X and y are ignored."""
        sde = self._build_sde()
        config = self._build_config(sde)
        self.model_ = train(config)
        self.loss_history_ = self.model_.loss_history
        self.n_features_in_ = (self.n_mesh + 1) * sde.noise_dim
        return self

    def _head_values(self, X):
        check_is_fitted(self, "model_")
        model = self.model_
        sde = model.sde
        X = _as_noise_matrix(X, model.grid.n, sde.noise_dim)
        features = X[:, 1:].reshape(X.shape[0], -1)
        ts = np.tile(model.grid.points, X.shape[0])
        rows = np.repeat(features, model.grid.n + 1, axis=0)
        values, _, _ = head_forward_batch(model.params, model.head, ts, rows)
        y = values.reshape(X.shape[0], model.grid.n + 1, -1).astype(np.float64)
        return X, y

    def transform(self, X):
        """Smooth parts Y(t_j) for each row of mesh noise values; (B, n+1, d)."""
        _, y = self._head_values(X)
        return y

    def predict(self, X):
        """Solution trajectories X(t_j) = Y(t_j) + sigma L(t_j); (B, n+1, d).

        For scalar problems the trailing axis is dropped: (B, n+1).
        """
        X, y = self._head_values(X)
        out = y + X @ self.model_.sde.sigma.T
        return out[:, :, 0] if out.shape[2] == 1 else out

    def sample_paths(self, count, seed=0):
        """Fresh driving-path mesh values shaped for predict: (B, n+1) or (B, n+1, m)."""
        sde = self._build_sde()
        grid = TimeGrid(self.n_mesh, self.horizon)
        values = np.stack(
            [
                sample_levy_path(sde.noise, grid, derive_seed(seed, i)).values
                for i in range(count)
            ]
        )
        return values[:, :, 0] if values.shape[2] == 1 else values

    def score(self, X=None, y=None, paths=256, seed=0):
        """Negative time-integrated RMS error against the exact reference (higher is better)."""
        from .evaluation import err_metrics

        check_is_fitted(self, "model_")
        report = err_metrics(self.model_, paths, derive_seed(seed, 99))
        return -report.err_time
