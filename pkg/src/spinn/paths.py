"""Driving-noise path sampling on uniform time meshes.

A path sample holds the values of a Levy process L at the mesh points
t_j = j*T/n of a TimeGrid, with L(0) = 0.  Supported processes: Wiener
(any dimension), compound Poisson with constant/Gaussian/uniform jump
sizes, symmetric Cauchy (increments drawn by inverse CDF), and linear
combinations of independent components.

All randomness is counter-based: a sampler takes a 64-bit integer seed
and builds its own Philox stream from it, so (kind, grid, seed) fully
determines the path no matter where or in what order it is drawn.
Per-path seeds for batches are derived from (master seed, index) with
numpy's SeedSequence, which keeps batch sampling order-independent.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from functools import cached_property

import numpy as np

MAX_COMBINATION_DEPTH = 4


class NoiseConfigError(ValueError):
    """Raised for unusable noise configurations (e.g. over-deep nesting)."""


# ---------------------------------------------------------------------------
# Time grid


@dataclass(frozen=True)
class TimeGrid:
    """Uniform mesh 0 = t_0 < t_1 < ... < t_n = T with t_j = j*T/n."""

    n: int
    horizon: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"mesh count must be >= 1, got {self.n}")
        if not (self.horizon > 0.0 and np.isfinite(self.horizon)):
            raise ValueError(f"horizon must be positive and finite, got {self.horizon}")

    @cached_property
    def points(self):
        # j/n is exact for j = 0 and j = n, so t_0 == 0.0 and t_n == horizon exactly.
        return self.horizon * (np.arange(self.n + 1) / self.n)

    @property
    def spacing(self):
        return self.horizon / self.n

    def refines(self, coarse):
        """True if this grid contains *coarse* as a nested subgrid."""
        return self.horizon == coarse.horizon and self.n % coarse.n == 0


# ---------------------------------------------------------------------------
# Noise kinds and jump laws


@dataclass(frozen=True)
class ConstantJump:
    size: float = 1.0

    def sample(self, count, rng):
        return np.full(count, self.size)


@dataclass(frozen=True)
class GaussianJump:
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if self.std < 0:
            raise NoiseConfigError(f"jump std must be >= 0, got {self.std}")

    def sample(self, count, rng):
        return self.mean + self.std * rng.standard_normal(count)


@dataclass(frozen=True)
class UniformJump:
    low: float = -1.0
    high: float = 1.0

    def __post_init__(self):
        if self.high < self.low:
            raise NoiseConfigError(f"jump bounds out of order: [{self.low}, {self.high}]")

    def sample(self, count, rng):
        return self.low + (self.high - self.low) * rng.random(count)


@dataclass(frozen=True)
class Wiener:
    dim: int = 1

    def __post_init__(self):
        if self.dim < 1:
            raise NoiseConfigError(f"Wiener dimension must be >= 1, got {self.dim}")


@dataclass(frozen=True)
class CompoundPoisson:
    rate: float
    jumps: object = ConstantJump()

    def __post_init__(self):
        if self.rate < 0:
            raise NoiseConfigError(f"jump intensity must be >= 0, got {self.rate}")


@dataclass(frozen=True)
class Cauchy:
    scale: float = 1.0

    def __post_init__(self):
        if self.scale <= 0:
            raise NoiseConfigError(f"Cauchy scale must be > 0, got {self.scale}")


@dataclass(frozen=True)
class LinearCombination:
    """Sum of independent scaled components, all of the same dimension."""

    components: tuple  # of (coefficient, NoiseKind) pairs

    def __post_init__(self):
        object.__setattr__(self, "components", tuple((float(c), k) for c, k in self.components))
        if not self.components:
            raise NoiseConfigError("linear combination needs at least one component")
        dims = {noise_dim(k) for _, k in self.components}
        if len(dims) != 1:
            raise NoiseConfigError(f"mixed component dimensions {sorted(dims)}")


def noise_dim(kind):
    if isinstance(kind, Wiener):
        return kind.dim
    if isinstance(kind, (CompoundPoisson, Cauchy)):
        return 1
    if isinstance(kind, LinearCombination):
        return noise_dim(kind.components[0][1])
    raise TypeError(f"not a noise kind: {kind!r}")


def combination_depth(kind):
    if isinstance(kind, LinearCombination):
        return 1 + max(combination_depth(k) for _, k in kind.components)
    return 1


# ---------------------------------------------------------------------------
# Path samples


@dataclass(frozen=True)
class PathSample:
    """Mesh values of one driving-noise trajectory; values[j] = L(t_j)."""

    grid: TimeGrid
    values: np.ndarray  # shape (n + 1, m), float64
    seed: int
    kind: object

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        object.__setattr__(self, "values", values)
        m = noise_dim(self.kind)
        if values.shape != (self.grid.n + 1, m):
            raise ValueError(
                f"values shape {values.shape} does not match grid/kind shape {(self.grid.n + 1, m)}"
            )
        if not np.all(values[0] == 0.0):
            raise ValueError("a noise path must start at 0")
        if not np.all(np.isfinite(values)):
            raise ValueError("noise path contains non-finite values")

    @property
    def dim(self):
        return self.values.shape[1]


def path_rng(seed):
    """Counter-based generator keyed directly by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=int(seed)))


def derive_seed(master_seed, *key):
    """Order-independent per-item seed from a master seed and an index tuple."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


def sample_values_at(kind, times, rng):
    """Exact-law values of L at the sorted times (>= 0), as an array (len(times), m).

    The joint law matches the restriction of the process to those times, so
    mesh sampling, refined meshes, and off-mesh evaluation points can all be
    drawn consistently.
    """
    times = np.asarray(times, dtype=np.float64)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a non-empty 1-D array")
    if times[0] < 0 or np.any(np.diff(times) < 0):
        raise ValueError("times must be sorted and nonnegative")

    if isinstance(kind, Wiener):
        dts = np.diff(np.concatenate(([0.0], times)))
        increments = rng.standard_normal((times.size, kind.dim)) * np.sqrt(dts)[:, None]
        return np.cumsum(increments, axis=0)

    if isinstance(kind, Cauchy):
        dts = np.diff(np.concatenate(([0.0], times)))
        u = rng.random(times.size)
        # inverse CDF of Cauchy(scale * dt): x = scale * dt * tan(pi * (u - 1/2))
        increments = kind.scale * dts * np.tan(np.pi * (u - 0.5))
        return np.cumsum(increments, axis=0)[:, None]

    if isinstance(kind, CompoundPoisson):
        t_max = times[-1]
        count = rng.poisson(kind.rate * t_max) if t_max > 0 else 0
        jump_times = np.sort(rng.random(count) * t_max)
        sizes = kind.jumps.sample(count, rng)
        cum = np.concatenate(([0.0], np.cumsum(sizes)))
        # value at t is the sum of jumps with jump time <= t
        return cum[np.searchsorted(jump_times, times, side="right")][:, None]

    if isinstance(kind, LinearCombination):
        total = np.zeros((times.size, noise_dim(kind)))
        for coefficient, component in kind.components:
            total += coefficient * sample_values_at(component, times, rng)
        return total

    raise TypeError(f"not a noise kind: {kind!r}")


def sample_levy_path(kind, grid, seed):
    """Sample one path of *kind* on *grid*; dispatches on the noise kind."""
    if combination_depth(kind) > MAX_COMBINATION_DEPTH:
        raise NoiseConfigError(
            f"linear combinations nested deeper than {MAX_COMBINATION_DEPTH} are not supported"
        )
    rng = path_rng(seed)
    values = np.concatenate(
        (np.zeros((1, noise_dim(kind))), sample_values_at(kind, grid.points[1:], rng))
    )
    return PathSample(grid=grid, values=values, seed=int(seed), kind=kind)


def sample_wiener_path(grid, m, seed):
    """Wiener path: independent N(0, h) increments per coordinate."""
    return sample_levy_path(Wiener(m), grid, seed)


def sample_compound_poisson_path(grid, rate, jumps, seed):
    """Compound Poisson path: Poisson(rate * T) jumps at uniform times."""
    return sample_levy_path(CompoundPoisson(rate, jumps), grid, seed)


def subsample_path(path, coarse_grid):
    """Exact restriction of a path to a nested coarser grid (no re-randomization)."""
    if not path.grid.refines(coarse_grid):
        raise ValueError(
            f"grid with n={path.grid.n}, T={path.grid.horizon} does not refine "
            f"n={coarse_grid.n}, T={coarse_grid.horizon}"
        )
    stride = path.grid.n // coarse_grid.n
    return PathSample(
        grid=coarse_grid, values=path.values[::stride].copy(), seed=path.seed, kind=path.kind
    )


# ---------------------------------------------------------------------------
# JSON round-trip of noise kinds (checkpoint self-description)


def noise_to_jsonable(kind):
    if isinstance(kind, Wiener):
        return {"kind": "wiener", "dim": kind.dim}
    if isinstance(kind, Cauchy):
        return {"kind": "cauchy", "scale": kind.scale}
    if isinstance(kind, CompoundPoisson):
        jumps = kind.jumps
        if isinstance(jumps, ConstantJump):
            law = {"kind": "const", "size": jumps.size}
        elif isinstance(jumps, GaussianJump):
            law = {"kind": "gauss", "mean": jumps.mean, "std": jumps.std}
        elif isinstance(jumps, UniformJump):
            law = {"kind": "uniform", "low": jumps.low, "high": jumps.high}
        else:
            raise TypeError(f"cannot serialize jump law {jumps!r}")
        return {"kind": "cpoisson", "rate": kind.rate, "jumps": law}
    if isinstance(kind, LinearCombination):
        return {
            "kind": "mix",
            "components": [[c, noise_to_jsonable(k)] for c, k in kind.components],
        }
    raise TypeError(f"cannot serialize noise kind {kind!r}")


def noise_from_jsonable(data):
    kind = data["kind"]
    if kind == "wiener":
        return Wiener(dim=int(data["dim"]))
    if kind == "cauchy":
        return Cauchy(scale=data["scale"])
    if kind == "cpoisson":
        law = data["jumps"]
        if law["kind"] == "const":
            jumps = ConstantJump(size=law["size"])
        elif law["kind"] == "gauss":
            jumps = GaussianJump(mean=law["mean"], std=law["std"])
        elif law["kind"] == "uniform":
            jumps = UniformJump(low=law["low"], high=law["high"])
        else:
            raise ValueError(f"unknown jump law {law['kind']!r}")
        return CompoundPoisson(rate=data["rate"], jumps=jumps)
    if kind == "mix":
        return LinearCombination(
            components=tuple((c, noise_from_jsonable(k)) for c, k in data["components"])
        )
    raise ValueError(f"unknown noise kind {kind!r}")


# ---------------------------------------------------------------------------
# CSV dump / readback: header "t,l_1,...,l_m", 17 significant digits


def write_path_csv(path, stream, extra_header=()):
    stream.write(f"# seed={path.seed}\n")
    for line in extra_header:
        stream.write(f"# {line}\n")
    m = path.dim
    stream.write("t," + ",".join(f"l_{k}" for k in range(1, m + 1)) + "\n")
    for t, row in zip(path.grid.points, path.values):
        stream.write(f"{t:.17g}," + ",".join(f"{v:.17g}" for v in row) + "\n")


def path_csv_text(path, extra_header=()):
    buf = io.StringIO()
    write_path_csv(path, buf, extra_header)
    return buf.getvalue()


def read_csv_columns(stream):
    """Read one of our CSV dumps back: (header names, float matrix, comments)."""
    comments = []
    header = None
    rows = []
    for raw in stream:
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            comments.append(line[1:].strip())
            continue
        if header is None:
            header = line.split(",")
            continue
        rows.append([float(v) for v in line.split(",")])
    if header is None:
        raise ValueError("CSV stream has no header row")
    return header, np.array(rows), comments
