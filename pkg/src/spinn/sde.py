"""SDE problem descriptions and the pathwise transform to a random ODE.

An additive-noise SDE

    dX(t) = a(t, X(t-)) dt + sigma dL(t),    X(0) = x0,

is converted pathwise by Y(t) = X(t) - sigma L(t) into the random ODE

    Y'(t) = f(t, Y(t), L(t)),    f(t, y, w) = a(t, y + sigma w),

which holds path by path and is what the network is trained on.  When the
drift is Lipschitz with constant L_a, the transformed right-hand side
satisfies

    |f(t,y1,w1) - f(t,y2,w2)| <= C1 (|y1-y2| + |w1-w2|),
    |f(t,y,w)| <= C2 (1 + |y| + |w|),

with C1 = L_a * max(1, |sigma|_F) and C2 = max(sup_t |f(t,0,0)|, C1), and
solutions obey the a priori bounds

    sup_t |Y(t)|      <= C3 (1 + int_0^T |L| dt),
    int_0^T |Y'|^2 dt <= C4 (1 + int_0^T |L|^2 dt),

with C3 = e^(C2 T) (1 + |x0|) max(1, C2, C2 T) and
C4 = 3 C2^2 max(1, T) (1 + 2 C3^2 T).  For merely bounded drift
(|a| <= D0) the simpler bounds sup|Y| <= |x0| + D0 T and
int |Y'|^2 <= D0^2 T hold instead.

Scalar multiplicative noise dX = a(t,X) dt + sigma X dW is brought into
additive form by the logarithm (Doss-Sussmann): Z = ln X solves an
additive-noise SDE with drift e^(-z) a(t, e^z) - sigma^2/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import expr as expr_mod
from .paths import Wiener, noise_dim

_SUP_GRID_POINTS = 1024  # t-grid used to estimate sup_t |a(t,0)| for time-dependent drifts


def _eye_like(x, scale):
    """Batched scale * identity: shape x.shape + (d,), with scale broadcast on the diagonal."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    jac = np.zeros(x.shape + (d,))
    idx = np.arange(d)
    jac[..., idx, idx] = scale
    return jac


@dataclass(frozen=True)
class LinearMeanReversion:
    """a(t, x) = rate * (level - x), elementwise in any dimension."""

    rate: float
    level: float

    lipschitz_L = property(lambda self: abs(self.rate))
    bound_D0 = None
    time_dependent = False
    dim = None  # elementwise: applies in any state dimension

    def __call__(self, t, x):
        x = np.asarray(x, dtype=np.float64)
        return self.rate * (self.level - x)

    def jacobian(self, t, x):
        return _eye_like(x, -self.rate)


@dataclass(frozen=True)
class SineDrift:
    """a(t, x) = rate * (level - sin(frequency * x)), elementwise; bounded drift."""

    rate: float
    level: float
    frequency: float

    lipschitz_L = property(lambda self: abs(self.rate * self.frequency))
    bound_D0 = property(lambda self: abs(self.rate) * (abs(self.level) + 1.0))
    time_dependent = False
    dim = None

    def __call__(self, t, x):
        x = np.asarray(x, dtype=np.float64)
        return self.rate * (self.level - np.sin(self.frequency * x))

    def jacobian(self, t, x):
        x = np.asarray(x, dtype=np.float64)
        return _eye_like(x, -self.rate * self.frequency * np.cos(self.frequency * x))


class ExpressionDrift:
    """Drift given by one expression per component over variables t, x1..xd.

    Lipschitz/boundedness cannot be inferred from source text, so callers
    declare `lipschitz` / `bound` when they know them; both default to
    unknown, which simply disables the constant-based a priori bounds.
    """

    def __init__(self, source, dim=1, lipschitz=None, bound=None):
        components = [s.strip() for s in source.split(";") if s.strip()]
        if not components:
            raise ValueError("empty drift expression")
        if len(components) != dim:
            raise ValueError(f"{len(components)} drift components for dimension {dim}")
        self.source = source
        self.dim = dim
        self.lipschitz_L = lipschitz
        self.bound_D0 = bound
        self._components = [expr_mod.parse_expression(c, dim=dim) for c in components]
        self._jacobian = [
            [component.diff(f"x{k}") for k in range(1, dim + 1)] for component in self._components
        ]
        used = set().union(*(expr_mod.variables_used(c) for c in self._components))
        self.time_dependent = "t" in used

    def __eq__(self, other):
        return isinstance(other, ExpressionDrift) and (
            (self.source, self.dim, self.lipschitz_L, self.bound_D0)
            == (other.source, other.dim, other.lipschitz_L, other.bound_D0)
        )

    def __repr__(self):
        return f"ExpressionDrift({self.source!r}, dim={self.dim})"

    def _env(self, t, x):
        env = {"t": np.asarray(t, dtype=np.float64)}
        for k in range(self.dim):
            env[f"x{k + 1}"] = x[..., k]
        return env

    def __call__(self, t, x):
        x = np.asarray(x, dtype=np.float64)
        env = self._env(t, x)
        shape = x.shape[:-1]
        out = np.empty(shape + (self.dim,))
        for i, component in enumerate(self._components):
            out[..., i] = np.broadcast_to(component.eval(env), shape)
        return out

    def jacobian(self, t, x):
        x = np.asarray(x, dtype=np.float64)
        env = self._env(t, x)
        shape = x.shape[:-1]
        jac = np.empty(shape + (self.dim, self.dim))
        for i in range(self.dim):
            for k in range(self.dim):
                jac[..., i, k] = np.broadcast_to(self._jacobian[i][k].eval(env), shape)
        return jac


@dataclass(frozen=True)
class SdeSpec:
    """Additive-noise SDE: drift a(t,x), diffusion matrix sigma, start x0, horizon, noise law."""

    drift: object
    sigma: np.ndarray  # (d, m)
    x0: np.ndarray  # (d,)
    horizon: float
    noise: object = Wiener(1)

    def __post_init__(self):
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=np.float64))
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "x0", x0)
        if not (self.horizon > 0 and np.isfinite(self.horizon)):
            raise ValueError(f"horizon must be positive and finite, got {self.horizon}")
        d, m = sigma.shape
        if x0.shape != (d,):
            raise ValueError(f"x0 shape {x0.shape} does not match sigma rows {d}")
        if noise_dim(self.noise) != m:
            raise ValueError(
                f"noise dimension {noise_dim(self.noise)} does not match sigma columns {m}"
            )
        drift_dim = getattr(self.drift, "dim", None)
        if drift_dim is not None and drift_dim != d:
            raise ValueError(f"drift dimension {drift_dim} does not match state dimension {d}")

    @property
    def dim(self):
        return self.sigma.shape[0]

    @property
    def noise_dim(self):
        return self.sigma.shape[1]


class RodeRhs:
    """f(t, y, w) = a(t, y + sigma w) with its growth/Lipschitz constants (when known)."""

    def __init__(self, drift, sigma, c1=None, c2=None):
        self.drift = drift
        self.sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
        self.c1 = c1
        self.c2 = c2

    def shift(self, y, w):
        """The argument a is evaluated at: y + sigma w (broadcasts over leading axes)."""
        y = np.asarray(y, dtype=np.float64)
        w = np.asarray(w, dtype=np.float64)
        return y + w @ self.sigma.T

    def __call__(self, t, y, w):
        return self.drift(t, self.shift(y, w))

    def jacobian_y(self, t, y, w):
        """d f / d y; equals the drift Jacobian at the shifted point (chain rule)."""
        return self.drift.jacobian(t, self.shift(y, w))


def _sup_drift_at_zero(drift, horizon, d):
    """sup_t |a(t, 0)| over [0, horizon]; exact single evaluation when autonomous."""
    zero = np.zeros(d)
    if not getattr(drift, "time_dependent", True):
        return float(np.linalg.norm(drift(0.0, zero)))
    ts = np.linspace(0.0, horizon, _SUP_GRID_POINTS)
    values = drift(ts, np.zeros((_SUP_GRID_POINTS, d)))
    return float(np.linalg.norm(values, axis=-1).max())


def make_rode_rhs(sde):
    """Bind drift and sigma into the RODE right-hand side, with C1/C2 when Lipschitz."""
    lip = getattr(sde.drift, "lipschitz_L", None)
    if lip is None:
        return RodeRhs(sde.drift, sde.sigma)
    c1 = lip * max(1.0, float(np.linalg.norm(sde.sigma)))  # Frobenius norm
    c2 = max(_sup_drift_at_zero(sde.drift, sde.horizon, sde.dim), c1)
    return RodeRhs(sde.drift, sde.sigma, c1=c1, c2=c2)


def drift_to_jsonable(drift):
    if isinstance(drift, LinearMeanReversion):
        return {"kind": "linear", "rate": drift.rate, "level": drift.level}
    if isinstance(drift, SineDrift):
        return {
            "kind": "sine",
            "rate": drift.rate,
            "level": drift.level,
            "frequency": drift.frequency,
        }
    if isinstance(drift, ExpressionDrift):
        return {
            "kind": "expression",
            "source": drift.source,
            "dim": drift.dim,
            "lipschitz": drift.lipschitz_L,
            "bound": drift.bound_D0,
        }
    raise TypeError(f"cannot serialize drift {drift!r}")


def drift_from_jsonable(data):
    kind = data["kind"]
    if kind == "linear":
        return LinearMeanReversion(rate=data["rate"], level=data["level"])
    if kind == "sine":
        return SineDrift(rate=data["rate"], level=data["level"], frequency=data["frequency"])
    if kind == "expression":
        return ExpressionDrift(
            data["source"], dim=data["dim"], lipschitz=data["lipschitz"], bound=data["bound"]
        )
    raise ValueError(f"unknown drift kind {kind!r}")


# ---------------------------------------------------------------------------
# Scalar multiplicative noise via the logarithm


class LogTransformedDrift:
    """Drift of Z = ln X when dX = a(t,X) dt + sigma X dW: e^(-z) a(t,e^z) - sigma^2/2."""

    dim = 1
    lipschitz_L = None
    bound_D0 = None

    def __init__(self, base, sigma):
        self.base = base
        self.sigma = float(sigma)
        self.time_dependent = getattr(base, "time_dependent", True)

    def __call__(self, t, z):
        z = np.asarray(z, dtype=np.float64)
        x = np.exp(z)
        return self.base(t, x) / x - 0.5 * self.sigma**2

    def jacobian(self, t, z):
        z = np.asarray(z, dtype=np.float64)
        x = np.exp(z)
        # d/dz [a(t,e^z)/e^z] = a_x(t,e^z) - a(t,e^z)/e^z
        return self.base.jacobian(t, x) - (self.base(t, x) / x)[..., None]


@dataclass(frozen=True)
class DossSussmann:
    """Z-equation binding for dX = a dt + sigma X dW, plus the inverse map."""

    rhs: RodeRhs
    y0: float  # ln(x0)
    sigma: float

    def reconstruct(self, y, w):
        """X = exp(Y + sigma W); broadcasts over trajectories."""
        y = np.asarray(y, dtype=np.float64)
        w = np.asarray(w, dtype=np.float64)
        return np.exp(y + self.sigma * w)


def doss_sussmann_scalar(drift, sigma, x0):
    """Additive-form RODE right-hand side for scalar multiplicative noise.

    Requires x0 > 0 (the transform lives on the positive half-line).
    """
    if not x0 > 0:
        raise ValueError(f"log transform needs x0 > 0, got {x0}")
    transformed = LogTransformedDrift(drift, sigma)
    rhs = RodeRhs(transformed, np.array([[float(sigma)]]))
    return DossSussmann(rhs=rhs, y0=math.log(x0), sigma=float(sigma))


# ---------------------------------------------------------------------------
# A priori bounds


@dataclass(frozen=True)
class BoundCheck:
    name: str  # "lipschitz" or "bounded-drift"
    sup_bound: float
    int_bound: float
    sup_ok: bool
    int_ok: bool
    c3: float = None
    c4: float = None

    @property
    def ok(self):
        return self.sup_ok and self.int_ok


@dataclass(frozen=True)
class BoundReport:
    sup_y: float
    int_dy2: float
    int_l: float
    int_l2: float
    checks: tuple

    @property
    def satisfied(self):
        return all(check.ok for check in self.checks)


def lipschitz_constants(c2, horizon, x0_norm):
    """C3 and C4 of the trajectory bounds for a Lipschitz right-hand side."""
    c3 = math.exp(c2 * horizon) * (1.0 + x0_norm) * max(1.0, c2, c2 * horizon)
    c4 = 3.0 * c2**2 * max(1.0, horizon) * (1.0 + 2.0 * c3**2 * horizon)
    return c3, c4


def a_priori_bounds(rhs, sde, path, y_values):
    """Check an integrated trajectory Y against the pathwise a priori bounds.

    y_values holds Y at the path's mesh points, shape (n+1, d).  Integrals
    of |L|, |L|^2 and |Y'|^2 are trapezoid estimates on that mesh, with
    Y'(t_j) evaluated through the right-hand side.  Needs C2 (Lipschitz
    drift) or a declared drift bound D0; raises ValueError when neither is
    available.
    """
    y_values = np.asarray(y_values, dtype=np.float64)
    ts = path.grid.points
    if y_values.shape != (path.grid.n + 1, sde.dim):
        raise ValueError(f"trajectory shape {y_values.shape} does not match mesh/state")

    sup_y = float(np.linalg.norm(y_values, axis=1).max())
    dy = rhs(ts, y_values, path.values)
    int_dy2 = float(np.trapezoid(np.sum(dy**2, axis=1), ts))
    l_norms = np.linalg.norm(path.values, axis=1)
    int_l = float(np.trapezoid(l_norms, ts))
    int_l2 = float(np.trapezoid(l_norms**2, ts))

    checks = []
    if rhs.c2 is not None:
        c3, c4 = lipschitz_constants(rhs.c2, sde.horizon, float(np.linalg.norm(sde.x0)))
        sup_bound = c3 * (1.0 + int_l)
        int_bound = c4 * (1.0 + int_l2)
        checks.append(
            BoundCheck(
                name="lipschitz",
                sup_bound=sup_bound,
                int_bound=int_bound,
                sup_ok=sup_y <= sup_bound,
                int_ok=int_dy2 <= int_bound,
                c3=c3,
                c4=c4,
            )
        )
    d0 = getattr(sde.drift, "bound_D0", None)
    if d0 is not None:
        sup_bound = float(np.linalg.norm(sde.x0)) + d0 * sde.horizon
        int_bound = d0**2 * sde.horizon
        checks.append(
            BoundCheck(
                name="bounded-drift",
                sup_bound=sup_bound,
                int_bound=int_bound,
                sup_ok=sup_y <= sup_bound,
                int_ok=int_dy2 <= int_bound,
            )
        )
    if not checks:
        raise ValueError("no usable constants: drift has neither a Lipschitz L nor a bound D0")
    return BoundReport(
        sup_y=sup_y, int_dy2=int_dy2, int_l=int_l, int_l2=int_l2, checks=tuple(checks)
    )


def check_lipschitz(drift, horizon, dim, seed, pairs=100, spread=3.0):
    """Spot-check a declared Lipschitz constant on random argument pairs.

    Returns the largest observed ratio |a(t,y1)-a(t,y2)| / |y1-y2|; raises
    ValueError if it exceeds the declared constant (beyond round-off).
    """
    lip = getattr(drift, "lipschitz_L", None)
    if lip is None:
        raise ValueError("drift declares no Lipschitz constant to check")
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    worst = 0.0
    for _ in range(pairs):
        t = rng.random() * horizon
        y1, y2 = spread * rng.standard_normal((2, dim))
        gap = float(np.linalg.norm(y1 - y2))
        if gap == 0.0:
            continue
        ratio = float(np.linalg.norm(drift(t, y1) - drift(t, y2))) / gap
        worst = max(worst, ratio)
    if worst > lip * (1.0 + 1e-12):
        raise ValueError(f"observed Lipschitz ratio {worst} exceeds declared {lip}")
    return worst
