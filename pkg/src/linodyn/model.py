"""System parameterization, trajectory evaluation and noisy observation
simulation for the linear system xdot = A x, x(0) = x0.

The flat parameter vector packs x0 first and then A in row-major order, so
entry a_jk (1-based) sits at position d + (j-1)*d + k of the 1-based vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import ComplexSpectrumError, NearDegenerateError
from .linalg import as_square_matrix, eig_real, expm


@dataclass(frozen=True)
class SystemParams:
    """Initial condition and drift matrix of one linear system."""

    x0: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        A = as_square_matrix(self.A, "A")
        if x0.shape[0] != A.shape[0]:
            raise ValueError(
                f"x0 has length {x0.shape[0]} but A is {A.shape[0]}x{A.shape[1]}")
        if not np.all(np.isfinite(x0)):
            raise ValueError("x0 contains non-finite entries")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "A", A)

    @property
    def dim(self):
        return self.x0.shape[0]


@dataclass(frozen=True)
class NoiseSpec:
    """Diagonal Gaussian measurement noise: per-coordinate standard
    deviations plus the 64-bit stream seed.

    Noise-free simulation is requested by passing None instead of a
    NoiseSpec; sigmas must be strictly positive here.
    """

    sigmas: np.ndarray
    seed: int

    def __post_init__(self):
        sig = np.asarray(self.sigmas, dtype=float).reshape(-1)
        if np.any(sig <= 0.0) or not np.all(np.isfinite(sig)):
            raise ValueError("all noise standard deviations must be in (0, inf)")
        object.__setattr__(self, "sigmas", sig)
        object.__setattr__(self, "seed", int(self.seed))

    @classmethod
    def isotropic(cls, sigma, d, seed):
        return cls(np.full(d, float(sigma)), seed)


@dataclass(frozen=True)
class ObservationSet:
    """States sampled on an equally-spaced time grid.

    Column i of `values` is the observation at t_start + i*delta_t; times
    are always derived from that index formula, never stored per column.
    """

    t_start: float
    delta_t: float
    values: np.ndarray
    label: str = "noise_free"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"values must be a d x n matrix, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("values contain non-finite entries")
        if not (self.delta_t > 0.0 and np.isfinite(self.delta_t)):
            raise ValueError("delta_t must be positive and finite")
        if not np.isfinite(self.t_start):
            raise ValueError("t_start must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "t_start", float(self.t_start))
        object.__setattr__(self, "delta_t", float(self.delta_t))

    @property
    def d(self):
        return self.values.shape[0]

    @property
    def n(self):
        return self.values.shape[1]

    @property
    def t_end(self):
        return self.t_start + (self.n - 1) * self.delta_t

    @property
    def times(self):
        return self.t_start + self.delta_t * np.arange(self.n)


def theta_length(d):
    return d + d * d


def dim_from_theta_length(length):
    """Recover d from len(theta) = d + d^2; raises on malformed lengths."""
    d = int(round((np.sqrt(4 * length + 1) - 1) / 2))
    if theta_length(d) != length:
        raise ValueError(f"length {length} is not of the form d + d^2")
    return d


def pack(params: SystemParams) -> np.ndarray:
    """Flatten (x0, A) into the length d + d^2 parameter vector."""
    return np.concatenate([params.x0, params.A.ravel()])


def unpack(theta) -> SystemParams:
    """Inverse of `pack`."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    d = dim_from_theta_length(theta.shape[0])
    return SystemParams(x0=theta[:d], A=theta[d:].reshape(d, d))


def theta_index(d, j, k):
    """0-based position of A[j, k] (0-based j, k) in the packed vector."""
    return d + j * d + k


def trajectory(params: SystemParams, times) -> np.ndarray:
    """Evaluate exp(A t) x0 at each requested time; column i is time i.

    When A has a distinct real spectrum a single eigendecomposition is
    reused for all times, else each time gets its own exp(A t).
    """
    times = np.asarray(times, dtype=float).reshape(-1)
    if not np.all(np.isfinite(times)):
        raise ValueError("times must be finite")
    try:
        dec = eig_real(params.A)
    except (ComplexSpectrumError, NearDegenerateError):
        cols = [expm(params.A * t) @ params.x0 for t in times]
        return np.stack(cols, axis=1) if cols else np.empty((params.dim, 0))
    w = dec.Q_inv @ params.x0
    E = np.exp(np.outer(dec.lambdas, times))
    return dec.Q @ (E * w[:, None])


def simulate_observations(params: SystemParams, n, T,
                          noise: NoiseSpec | None) -> ObservationSet:
    """Sample the trajectory at t_i = (i-1) T/(n-1) and add diagonal
    Gaussian noise.

    The noise matrix is filled time-major: the d deviates of observation i
    are stream outputs i*d .. i*d + d - 1.  Passing noise=None yields exact
    trajectory samples labelled noise_free.
    """
    n = int(n)
    if n < 2:
        raise ValueError("need n >= 2 observations")
    if not T > 0:
        raise ValueError("T must be positive")
    d = params.dim
    delta_t = T / (n - 1)
    times = delta_t * np.arange(n)
    values = trajectory(params, times)
    if noise is None:
        return ObservationSet(t_start=0.0, delta_t=delta_t, values=values,
                              label="noise_free")
    if noise.sigmas.shape[0] != d:
        raise ValueError("noise dimension does not match the system")
    eps = rng.normals(noise.seed, n * d).reshape(n, d).T
    values = values + noise.sigmas[:, None] * eps
    return ObservationSet(t_start=0.0, delta_t=delta_t, values=values,
                          label="noisy")


def write_csv(obs: ObservationSet, path):
    """Serialize to CSV with header t,x1,...,xd and 17 significant digits."""
    d = obs.d
    header = "t," + ",".join(f"x{j + 1}" for j in range(d))
    times = obs.times
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for i in range(obs.n):
            row = [f"{times[i]:.17g}"] + [f"{obs.values[j, i]:.17g}"
                                          for j in range(d)]
            fh.write(",".join(row) + "\n")


def read_csv(path, label="noisy") -> ObservationSet:
    """Parse an observation CSV, validating the equal-spacing contract."""
    with open(path) as fh:
        header = fh.readline().strip()
        cols = header.split(",")
        if cols[0] != "t" or len(cols) < 2:
            raise ValueError(f"unexpected header {header!r} in {path}")
        rows = [list(map(float, line.strip().split(",")))
                for line in fh if line.strip()]
    if not rows:
        raise ValueError(f"no observations in {path}")
    data = np.asarray(rows, dtype=float)
    if data.shape[1] != len(cols):
        raise ValueError(f"ragged rows in {path}")
    times = data[:, 0]
    values = data[:, 1:].T
    if len(times) < 2:
        raise ValueError("need at least two rows to define the grid spacing")
    steps = np.diff(times)
    delta_t = (times[-1] - times[0]) / (len(times) - 1)
    # Spacing jitter is judged relative to the grid's own scale: per-stamp
    # rounding grows with |t|, not with delta_t.
    scale = max(abs(times[0]), abs(times[-1]), abs(delta_t))
    if delta_t <= 0 or np.any(np.abs(steps - delta_t) > 1e-12 * scale):
        raise ValueError(f"time grid in {path} is not equally spaced")
    return ObservationSet(t_start=times[0], delta_t=delta_t, values=values,
                          label=label)
