"""Pathwise neural solver for SDEs with additive Levy noise.

The solution is split as X(t) = Y(t) + sigma L(t); the smooth part Y
solves a random ODE and is learned by a small tanh network whose head
hard-codes the initial value and initial derivative.  Training needs no
solved trajectories - only sampled driving paths and the drift.

Submodules: `paths` (Levy path sampling), `bridge` (conditional Brownian
draws), `sde` (drifts, diffusion-removal transform, a priori bounds),
`network` (MLP + exact derivatives), `training` (SGD loop and losses),
`solvers` (Euler-Maruyama / RK4 references), `evaluation` (error
metrics), `estimator` (sklearn-style front end), `config`/`cli`.

Attributes are loaded lazily so that importing `spinn` stays cheap until
numerics are actually touched (the CLI relies on this to pin BLAS thread
counts before numpy loads).
"""

from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    # paths
    "TimeGrid": "paths",
    "Wiener": "paths",
    "CompoundPoisson": "paths",
    "Cauchy": "paths",
    "LinearCombination": "paths",
    "ConstantJump": "paths",
    "GaussianJump": "paths",
    "UniformJump": "paths",
    "PathSample": "paths",
    "sample_levy_path": "paths",
    "sample_wiener_path": "paths",
    "sample_compound_poisson_path": "paths",
    "subsample_path": "paths",
    "derive_seed": "paths",
    "path_rng": "paths",
    "NoiseConfigError": "paths",
    # bridge
    "sample_bridge": "bridge",
    "brownian_bridge_mean_var": "bridge",
    "BridgeDraw": "bridge",
    "BridgeUnsupportedError": "bridge",
    # sde
    "SdeSpec": "sde",
    "LinearMeanReversion": "sde",
    "SineDrift": "sde",
    "ExpressionDrift": "sde",
    "RodeRhs": "sde",
    "make_rode_rhs": "sde",
    "doss_sussmann_scalar": "sde",
    "a_priori_bounds": "sde",
    "lipschitz_constants": "sde",
    # network
    "Architecture": "network",
    "MlpParams": "network",
    "HeadBinding": "network",
    "init_params": "network",
    "bind_head": "network",
    "head_forward": "network",
    "head_forward_with_time_derivative": "network",
    "loss_weight_gradient": "network",
    "save_params": "network",
    "load_params": "network",
    # training
    "TrainConfig": "training",
    "TrainedModel": "training",
    "PowerDecay": "training",
    "ConstantRate": "training",
    "TrainingDiverged": "training",
    "train": "training",
    "save_model": "training",
    "load_model": "training",
    # solvers
    "euler_maruyama": "solvers",
    "integrate_rode": "solvers",
    "reference_grid": "solvers",
    "subsample": "solvers",
    "Trajectory": "solvers",
    # evaluation
    "err_metrics": "evaluation",
    "ErrorReport": "evaluation",
    "reconstruct_x": "evaluation",
    # estimator / config
    "SpinnRegressor": "estimator",
    "RunConfig": "config",
    "parse_config": "config",
    "serialize_config": "config",
    "parse_noise": "config",
    "ConfigError": "config",
    # expressions
    "parse_expression": "expr",
    "ExprError": "expr",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    module = _EXPORTS.get(name)
    if module is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    return getattr(import_module(f".{module}", __name__), name)


def __dir__():
    return __all__
