"""Run configuration: a flat ``key = value`` text format.

One config file pins a whole experiment - problem, mesh, training
hyperparameters, evaluation settings, output directory - so a run is
reproducible from the file plus nothing else.  Unknown and duplicate
keys are hard errors; parse -> serialize -> parse is the identity, and
the serialized form echoes every default so the file documents itself.

Noise kinds use a tiny spec language::

    wiener            standard Brownian motion (optionally wiener(3))
    cauchy(0.5)       Cauchy process with scale 0.5
    cpoisson(2, gauss(0, 1))    rate-2 compound Poisson, N(0,1) jumps
                      (jump laws: const(c), gauss(mean, std), uniform(lo, hi))
    mix(1*wiener, 0.3*cpoisson(5, const(1)))   independent sum

Flag overrides (``--set key=value``) are applied after the file and win.
"""

from __future__ import annotations

from dataclasses import dataclass

from .expr import ExprError, tokenize
from .paths import (
    Cauchy,
    CompoundPoisson,
    ConstantJump,
    GaussianJump,
    LinearCombination,
    NoiseConfigError,
    TimeGrid,
    UniformJump,
    Wiener,
    noise_dim,
)
from .sde import ExpressionDrift, SdeSpec
from .training import ConstantRate, PowerDecay, TrainConfig


class ConfigError(ValueError):
    """Config syntax or semantic error with a 1-based position (0 = from a flag)."""

    def __init__(self, message, line=0, column=0):
        where = f" (line {line}, column {column})" if line else " (from --set)"
        super().__init__(f"{message}{where}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class RunConfig:
    # problem
    drift: str = "5*(0.4 - x1)"
    lipschitz: float = None  # Lipschitz constant of the drift, if known
    bound: float = None  # uniform bound on the drift, if known
    sigma: tuple = ((0.61,),)  # rows of the diffusion matrix
    x0: tuple = (-0.3,)
    horizon: float = 1.0
    noise: object = Wiener(1)
    # discretization
    n_mesh: int = 512
    # training
    loss: str = "bridge"
    epochs: int = 2000
    batch_size: int = 64
    eta0: float = 1e-3
    decay: float = 0.6  # none = constant learning rate
    precision: str = "single"
    width_cap: int = 512
    seed: int = 0
    # evaluation and artifacts
    eval_paths: int = 10000
    eval_n: int = 0  # 0 = evaluate on the information mesh
    dump_paths: int = 0  # per-path diagnostic CSVs written by evaluate
    checkpoint_every: int = 0
    outdir: str = "runs/out"

    def to_sde(self):
        import numpy as np

        drift = ExpressionDrift(
            self.drift, dim=len(self.x0), lipschitz=self.lipschitz, bound=self.bound
        )
        return SdeSpec(
            drift=drift,
            sigma=np.asarray(self.sigma, dtype=np.float64),
            x0=np.asarray(self.x0, dtype=np.float64),
            horizon=self.horizon,
            noise=self.noise,
        )

    def to_train_config(self, sde=None):
        schedule = ConstantRate(self.eta0) if self.decay is None else PowerDecay(self.eta0, self.decay)
        return TrainConfig(
            sde=self.to_sde() if sde is None else sde,
            grid=TimeGrid(self.n_mesh, self.horizon),
            epochs=self.epochs,
            batch_size=self.batch_size,
            schedule=schedule,
            loss=self.loss,
            seed=self.seed,
            precision=self.precision,
            width_cap=self.width_cap,
            checkpoint_every=self.checkpoint_every,
        )

    @property
    def eval_grid_n(self):
        return self.eval_n if self.eval_n else self.n_mesh


# ---------------------------------------------------------------------------
# Scanning: raw key = value entries with positions


def _scan(text):
    entries = {}
    for lineno, raw in enumerate(text.split("\n"), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in raw:
            raise ConfigError("expected 'key = value'", lineno, 1 + len(raw) - len(raw.lstrip()))
        key_part, _, value_part = raw.partition("=")
        key = key_part.strip()
        key_col = 1 + len(key_part) - len(key_part.lstrip())
        if not key.isidentifier():
            raise ConfigError(f"bad key {key!r}", lineno, key_col)
        value = value_part.strip()
        value_col = len(key_part) + 2 + (len(value_part) - len(value_part.lstrip()))
        if not value:
            raise ConfigError(f"missing value for key {key!r}", lineno, value_col)
        if key in entries:
            raise ConfigError(f"duplicate key {key!r}", lineno, key_col)
        entries[key] = (value, lineno, value_col, key_col)
    if not entries:
        raise ConfigError("empty configuration (no 'key = value' lines)", 1, 1)
    return entries


# ---------------------------------------------------------------------------
# Typed value parsers


def _parse_int(key, text, line, col, minimum):
    try:
        value = int(text)
    except ValueError:
        raise ConfigError(f"{key} expects an integer, got {text!r}", line, col) from None
    if value < minimum:
        raise ConfigError(f"{key} must be >= {minimum}, got {value}", line, col)
    return value


def _parse_float(key, text, line, col):
    try:
        return float(text.replace("−", "-"))
    except ValueError:
        raise ConfigError(f"{key} expects a number, got {text!r}", line, col) from None


def _parse_optional_float(key, text, line, col):
    if text.lower() == "none":
        return None
    return _parse_float(key, text, line, col)


def _parse_floats(key, text, sep, line, col):
    return tuple(_parse_float(key, part, line, col) for part in text.split(sep))


def _parse_matrix(key, text, line, col):
    rows = tuple(_parse_floats(key, row, ",", line, col) for row in text.split(";"))
    if len({len(row) for row in rows}) != 1:
        raise ConfigError(f"{key} rows have unequal lengths", line, col)
    return rows


def _parse_choice(key, text, line, col, choices):
    if text not in choices:
        raise ConfigError(f"{key} must be one of {sorted(choices)}, got {text!r}", line, col)
    return text


# ---------------------------------------------------------------------------
# Noise spec mini-parser (shares the expression tokenizer)


class _NoiseCursor:
    def __init__(self, text, line, col):
        try:
            self.tokens = tokenize(text)
        except ExprError as err:
            raise ConfigError(str(err), line, col) from None
        self.pos = 0
        self.line = line
        self.col = col  # column of the spec inside the config line

    def _where(self, token):
        return self.line, self.col + token.column - 1

    def fail(self, message, token):
        raise ConfigError(message, *self._where(token))

    def peek(self):
        return self.tokens[self.pos]

    def take(self, kind, text=None):
        token = self.tokens[self.pos]
        if token.kind != kind or (text is not None and token.text != text):
            expected = text or kind
            self.fail(f"expected {expected!r}, got {token.text or 'end of input'!r}", token)
        self.pos += 1
        return token

    def number(self):
        sign = 1.0
        if self.peek().kind == "op" and self.peek().text == "-":
            self.take("op", "-")
            sign = -1.0
        return sign * float(self.take("number").text)


def parse_noise(text, line=0, col=0):
    """Parse a noise spec like ``wiener``, ``cpoisson(2, gauss(0,1))``, ``mix(...)``."""
    cursor = _NoiseCursor(text, line, col)
    kind = _noise_kind(cursor)
    trailing = cursor.peek()
    if trailing.kind != "end":
        cursor.fail(f"unexpected trailing input {trailing.text!r}", trailing)
    return kind


def _noise_kind(cursor):
    token = cursor.take("ident")
    name = token.text
    try:
        if name == "wiener":
            dim = 1
            if cursor.peek().text == "(":
                cursor.take("op", "(")
                dim_token = cursor.take("number")
                try:
                    dim = int(dim_token.text)
                except ValueError:
                    cursor.fail(f"wiener dimension must be an integer, got {dim_token.text!r}", dim_token)
                cursor.take("op", ")")
            return Wiener(dim)
        if name == "cauchy":
            cursor.take("op", "(")
            scale = cursor.number()
            cursor.take("op", ")")
            return Cauchy(scale)
        if name == "cpoisson":
            cursor.take("op", "(")
            rate = cursor.number()
            cursor.take("op", ",")
            jumps = _jump_law(cursor)
            cursor.take("op", ")")
            return CompoundPoisson(rate, jumps)
        if name == "mix":
            cursor.take("op", "(")
            components = [_mix_component(cursor)]
            while cursor.peek().text == ",":
                cursor.take("op", ",")
                components.append(_mix_component(cursor))
            cursor.take("op", ")")
            return LinearCombination(tuple(components))
    except NoiseConfigError as err:
        cursor.fail(str(err), token)
    cursor.fail(f"unknown noise kind {name!r}", token)


def _mix_component(cursor):
    coefficient = cursor.number()
    cursor.take("op", "*")
    return coefficient, _noise_kind(cursor)


def _jump_law(cursor):
    token = cursor.take("ident")
    name = token.text
    try:
        if name == "const":
            cursor.take("op", "(")
            size = cursor.number()
            cursor.take("op", ")")
            return ConstantJump(size)
        if name == "gauss":
            cursor.take("op", "(")
            mean = cursor.number()
            cursor.take("op", ",")
            std = cursor.number()
            cursor.take("op", ")")
            return GaussianJump(mean, std)
        if name == "uniform":
            cursor.take("op", "(")
            low = cursor.number()
            cursor.take("op", ",")
            high = cursor.number()
            cursor.take("op", ")")
            return UniformJump(low, high)
    except NoiseConfigError as err:
        cursor.fail(str(err), token)
    cursor.fail(f"unknown jump law {name!r} (const, gauss, uniform)", token)


def noise_text(kind):
    """Canonical spec string for a noise kind; parse_noise(noise_text(k)) == k."""
    if isinstance(kind, Wiener):
        return "wiener" if kind.dim == 1 else f"wiener({kind.dim})"
    if isinstance(kind, Cauchy):
        return f"cauchy({kind.scale!r})"
    if isinstance(kind, CompoundPoisson):
        return f"cpoisson({kind.rate!r}, {_jump_text(kind.jumps)})"
    if isinstance(kind, LinearCombination):
        inner = ", ".join(f"{c!r}*{noise_text(k)}" for c, k in kind.components)
        return f"mix({inner})"
    raise TypeError(f"no spec syntax for noise kind {type(kind).__name__}")


def _jump_text(law):
    if isinstance(law, ConstantJump):
        return f"const({law.size!r})"
    if isinstance(law, GaussianJump):
        return f"gauss({law.mean!r}, {law.std!r})"
    if isinstance(law, UniformJump):
        return f"uniform({law.low!r}, {law.high!r})"
    raise TypeError(f"no spec syntax for jump law {type(law).__name__}")


# ---------------------------------------------------------------------------
# The full parser


def parse_config(text, overrides=()):
    """Parse config text, apply ``key=value`` overrides (flags win), validate."""
    entries = _scan(text)
    for item in overrides:
        key, eq, value = item.partition("=")
        key = key.strip()
        value = value.strip()
        if not eq or not key.isidentifier() or not value:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        entries[key] = (value, 0, 0, 0)
    return _build(entries)


_INT_MINIMUMS = {
    "n_mesh": 1,
    "epochs": 1,
    "batch_size": 1,
    "width_cap": 1,
    "seed": 0,
    "eval_paths": 1,
    "eval_n": 0,
    "dump_paths": 0,
    "checkpoint_every": 0,
}


def _build(entries):
    fields = {}
    positions = {}

    def take(key):
        value, line, col, _ = entries.pop(key)
        positions[key] = (line, col)
        return value, line, col

    for key in list(entries):
        if key not in RunConfig.__dataclass_fields__:
            _, line, _, key_col = entries[key]
            raise ConfigError(f"unknown key {key!r}", line, key_col)

    for key, minimum in _INT_MINIMUMS.items():
        if key in entries:
            fields[key] = _parse_int(key, *take(key), minimum)
    for key in ("horizon", "eta0"):
        if key in entries:
            value, line, col = take(key)
            fields[key] = _parse_float(key, value, line, col)
            if fields[key] <= 0:
                raise ConfigError(f"{key} must be > 0, got {fields[key]}", line, col)
    for key in ("lipschitz", "bound", "decay"):
        if key in entries:
            fields[key] = _parse_optional_float(key, *take(key))
    if "loss" in entries:
        fields["loss"] = _parse_choice("loss", *take("loss"), {"bridge", "grid"})
    if "precision" in entries:
        fields["precision"] = _parse_choice("precision", *take("precision"), {"single", "double"})
    if "outdir" in entries:
        fields["outdir"], _, _ = take("outdir")
    if "sigma" in entries:
        fields["sigma"] = _parse_matrix("sigma", *take("sigma"))
    if "x0" in entries:
        value, line, col = take("x0")
        fields["x0"] = _parse_floats("x0", value, ",", line, col)
    if "noise" in entries:
        value, line, col = take("noise")
        fields["noise"] = parse_noise(value, line, col)
    if "drift" in entries:
        fields["drift"], _, _ = take("drift")

    config = RunConfig(**fields)
    _validate(config, positions)
    return config


def _at(positions, *keys):
    for key in keys:
        if key in positions:
            return positions[key]
    return (0, 0)


def _validate(config, positions):
    # the drift expression must parse against the declared state dimension
    dim = len(config.x0)
    line, col = _at(positions, "drift")
    try:
        ExpressionDrift(config.drift, dim=dim, lipschitz=config.lipschitz, bound=config.bound)
    except ExprError as err:
        # map the expression-local position onto the config line
        column = col + err.column - 1 if line else 0
        raise ConfigError(f"in drift: {err.message}", line, column) from None
    except ValueError as err:
        raise ConfigError(f"in drift: {err}", line, col) from None

    sigma_rows = len(config.sigma)
    sigma_cols = len(config.sigma[0])
    if sigma_rows != dim:
        raise ConfigError(
            f"sigma has {sigma_rows} rows but x0 has dimension {dim} "
            "(conflicting keys: sigma, x0)",
            *_at(positions, "sigma", "x0"),
        )
    dim_of_noise = noise_dim(config.noise)
    if dim_of_noise != sigma_cols:
        raise ConfigError(
            f"sigma has {sigma_cols} columns but the noise is {dim_of_noise}-dimensional "
            "(conflicting keys: sigma, noise)",
            *_at(positions, "noise", "sigma"),
        )
    if config.loss == "bridge" and not isinstance(config.noise, Wiener):
        raise ConfigError(
            "the bridge loss needs Wiener noise, but noise = "
            f"{noise_text(config.noise)} (conflicting keys: loss, noise); use loss = grid",
            *_at(positions, "loss", "noise"),
        )
    if config.decay is not None and not 0.5 < config.decay <= 1.0:
        raise ConfigError(
            f"decay must lie in (0.5, 1] or be none, got {config.decay}",
            *_at(positions, "decay"),
        )
    if config.eval_n and config.eval_n & (config.eval_n - 1):
        raise ConfigError(
            f"eval_n must be a power of two (to nest in the reference mesh), got {config.eval_n}",
            *_at(positions, "eval_n"),
        )
    if config.n_mesh & (config.n_mesh - 1):
        raise ConfigError(
            f"n_mesh must be a power of two (to nest in the reference mesh), got {config.n_mesh}",
            *_at(positions, "n_mesh"),
        )


# ---------------------------------------------------------------------------
# Serialization (echoes every key, defaults included)


def _fmt(value):
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(config):
    sigma = "; ".join(", ".join(repr(v) for v in row) for row in config.sigma)
    x0 = ", ".join(repr(v) for v in config.x0)
    lines = [
        "# problem",
        f"drift = {config.drift}",
        f"lipschitz = {_fmt(config.lipschitz)}",
        f"bound = {_fmt(config.bound)}",
        f"sigma = {sigma}",
        f"x0 = {x0}",
        f"horizon = {_fmt(config.horizon)}",
        f"noise = {noise_text(config.noise)}",
        "",
        "# discretization",
        f"n_mesh = {config.n_mesh}",
        "",
        "# training",
        f"loss = {config.loss}",
        f"epochs = {config.epochs}",
        f"batch_size = {config.batch_size}",
        f"eta0 = {_fmt(config.eta0)}",
        f"decay = {_fmt(config.decay)}",
        f"precision = {config.precision}",
        f"width_cap = {config.width_cap}",
        f"seed = {config.seed}",
        "",
        "# evaluation and artifacts",
        f"eval_paths = {config.eval_paths}",
        f"eval_n = {config.eval_n}",
        f"dump_paths = {config.dump_paths}",
        f"checkpoint_every = {config.checkpoint_every}",
        f"outdir = {config.outdir}",
    ]
    return "\n".join(lines) + "\n"


def with_overrides(config, overrides):
    """Apply ``key=value`` strings on top of an existing config (flags win)."""
    return parse_config(serialize_config(config), overrides)
