"""Aggregated and time-scaled observation pipelines.

Block-averaging k consecutive samples, or re-indexing the samples on a
dilated clock, yields data from another linear system whose parameters
relate to the original ones by closed-form maps.  This module builds the
degraded data, the forward parameter map, its inverse g (degraded estimate
back to original parameters) and the Jacobian of g used by the degraded
sandwich covariance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularAggregationSumError
from .linalg import expm
from .model import (
    ObservationSet,
    SystemParams,
    pack,
    theta_length,
    unpack,
)

AGGREGATED = "aggregated"
TIME_SCALED = "time_scaled"


@dataclass(frozen=True)
class DegradedSpec:
    """Which degradation is applied and with what factor.

    For aggregation k is an integer block size >= 2 (k = 1 is tolerated as
    the degenerate identity, useful for consistency checks); base_delta_t
    is the spacing of the *original* grid, which the aggregated parameter
    maps need.  For time scaling k is any positive real and base_delta_t
    is ignored.
    """

    mode: str
    k: float
    base_delta_t: float | None = None

    def __post_init__(self):
        if self.mode not in (AGGREGATED, TIME_SCALED):
            raise ValueError(f"unknown degradation mode {self.mode!r}")
        if self.mode == AGGREGATED:
            if self.k != int(self.k) or self.k < 1:
                raise ValueError("aggregation factor must be an integer >= 2 "
                                 "(1 only as the degenerate identity)")
            if self.base_delta_t is None or not self.base_delta_t > 0:
                raise ValueError("aggregated mode requires base_delta_t > 0")
            object.__setattr__(self, "k", int(self.k))
        else:
            if not self.k > 0:
                raise ValueError("time-scale factor must be positive")
            object.__setattr__(self, "k", float(self.k))


def aggregate(obs: ObservationSet, k: int) -> ObservationSet:
    """Means of k consecutive non-overlapping columns, stamped at the time
    of each block's first sample; trailing remainder columns are dropped."""
    k = int(k)
    if k < 2:
        raise ValueError("aggregation factor must be an integer >= 2")
    n_out = obs.n // k
    if n_out < 1:
        raise ValueError(f"aggregating {obs.n} samples by k={k} leaves nothing")
    vals = obs.values[:, :n_out * k].reshape(obs.d, n_out, k).mean(axis=2)
    return ObservationSet(t_start=obs.t_start, delta_t=k * obs.delta_t,
                          values=vals, label=f"aggregated({k})")


def time_scale(obs: ObservationSet, k: float) -> ObservationSet:
    """Same values on the dilated clock t -> k t."""
    k = float(k)
    if not k > 0:
        raise ValueError("time-scale factor must be positive")
    return ObservationSet(t_start=k * obs.t_start, delta_t=k * obs.delta_t,
                          values=obs.values, label=f"time_scaled({k:g})")


def degrade(obs: ObservationSet, spec: DegradedSpec) -> ObservationSet:
    if spec.mode == AGGREGATED:
        return aggregate(obs, spec.k) if spec.k > 1 else obs
    return time_scale(obs, spec.k)


def _propagator_sum(A, delta_t, k):
    """I + exp(A dt) + ... + exp(A (k-1) dt), accumulated term by term."""
    d = A.shape[0]
    total = np.eye(d)
    if k > 1:
        P = expm(A * delta_t)
        term = np.eye(d)
        for _ in range(k - 1):
            term = term @ P
            total = total + term
    return total


def forward_params(params: SystemParams, spec: DegradedSpec) -> SystemParams:
    """True parameters of the system the degraded observations follow."""
    if spec.mode == TIME_SCALED:
        return SystemParams(x0=params.x0, A=params.A / spec.k)
    B = _propagator_sum(params.A, spec.base_delta_t, spec.k)
    return SystemParams(x0=(B @ params.x0) / spec.k, A=params.A)


def g_map(theta_tilde, spec: DegradedSpec) -> np.ndarray:
    """Map a degraded-system parameter vector back to the original system."""
    pt = unpack(theta_tilde)
    if spec.mode == TIME_SCALED:
        return pack(SystemParams(x0=pt.x0, A=spec.k * pt.A))
    B = _propagator_sum(pt.A, spec.base_delta_t, spec.k)
    svals = np.linalg.svd(B, compute_uv=False)
    if svals[-1] <= 1e-12 * max(1.0, svals[0]):
        raise SingularAggregationSumError(
            f"propagator sum is numerically singular (sigma_min = {svals[-1]:.3e})")
    x0 = spec.k * np.linalg.solve(B, pt.x0)
    return pack(SystemParams(x0=x0, A=pt.A))


def g_gradient(theta_tilde, spec: DegradedSpec) -> np.ndarray:
    """Jacobian of `g_map` at theta_tilde, columns in packing order.

    Time scaling is the exact block-diagonal map diag(I_d, k I_{d^2}).  For
    aggregation the x0 rows differentiate k B^{-1} x~0 through both
    arguments; the entry derivatives of the propagator sum are evaluated
    with the augmented-matrix form of dexpm, which stays valid for any
    spectrum the optimizer may visit.
    """
    theta_tilde = np.asarray(theta_tilde, dtype=float).reshape(-1)
    pt = unpack(theta_tilde)
    d = pt.dim
    p = theta_length(d)
    if spec.mode == TIME_SCALED:
        G = np.eye(p)
        G[d:, d:] *= spec.k
        return G
    k, dt = spec.k, spec.base_delta_t
    B = _propagator_sum(pt.A, dt, k)
    svals = np.linalg.svd(B, compute_uv=False)
    if svals[-1] <= 1e-12 * max(1.0, svals[0]):
        raise SingularAggregationSumError(
            f"propagator sum is numerically singular (sigma_min = {svals[-1]:.3e})")
    G = np.zeros((p, p))
    G[d:, d:] = np.eye(d * d)
    Binv = np.linalg.inv(B)
    G[:d, :d] = k * Binv
    Binv_x = Binv @ pt.x0
    for c in range(d * d if k > 1 else 0):
        j, kk = divmod(c, d)
        # sum_{l=1}^{k-1} Z_jk(l dt) from powers of one block propagator:
        # exp(block * l dt) = exp(block * dt)^l exactly.
        M = np.zeros((2 * d, 2 * d))
        M[:d, :d] = pt.A
        M[d:, d:] = pt.A
        M[j, d + kk] = 1.0
        P = expm(M * dt)
        term = P.copy()
        dB = term[:d, d:].copy()
        for _ in range(k - 2):
            term = term @ P
            dB += term[:d, d:]
        G[:d, d + c] = -k * (Binv @ (dB @ Binv_x))
    return G
