"""Structural checks and exact closed-form recovery from noise-free
equally-spaced samples.

A system is recoverable from d+1 equally-spaced samples when the Krylov
vectors x0, A x0, ..., A^{d-1} x0 are independent and A has d distinct real
eigenvalues; recovery solves the one-step propagator from two shifted
d-column windows and takes its real logarithm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ComplexSpectrumError,
    NearDegenerateError,
    SingularWindowError,
)
from .linalg import SEPARATION_TOL, eig_real, expm, logm_real
from .model import ObservationSet, SystemParams


@dataclass(frozen=True)
class ToleranceSet:
    """Numerical thresholds for the independence and spectrum checks."""

    rank_rel: float = 1e-10
    separation: float = SEPARATION_TOL


@dataclass(frozen=True)
class IdentifiabilityReport:
    a1_holds: bool
    a1_min_singular: float
    a2_holds: bool
    a2_detail: str          # "ok" | "complex" | "repeated"
    a2_min_separation: float | None

    @property
    def verdict(self):
        return self.a1_holds and self.a2_holds


def krylov_matrix(params: SystemParams) -> np.ndarray:
    """Matrix with columns x0, A x0, ..., A^{d-1} x0."""
    d = params.dim
    K = np.empty((d, d))
    v = params.x0
    for j in range(d):
        K[:, j] = v
        v = params.A @ v
    return K


def check_identifiable(params: SystemParams,
                       tol: ToleranceSet = ToleranceSet()) -> IdentifiabilityReport:
    """Evaluate the Krylov-independence and spectrum conditions.

    Failures are report states, never exceptions.
    """
    K = krylov_matrix(params)
    svals = np.linalg.svd(K, compute_uv=False)
    smin, smax = float(svals[-1]), float(svals[0])
    a1 = smin > tol.rank_rel * smax
    try:
        dec = eig_real(params.A, tol.separation)
        a2, detail, sep = True, "ok", dec.min_separation
    except ComplexSpectrumError:
        a2, detail, sep = False, "complex", None
    except NearDegenerateError as err:
        a2, detail, sep = False, "repeated", err.min_separation
    return IdentifiabilityReport(a1_holds=a1, a1_min_singular=smin,
                                 a2_holds=a2, a2_detail=detail,
                                 a2_min_separation=sep)


def recover_exact(obs: ObservationSet,
                  tol: ToleranceSet = ToleranceSet()) -> SystemParams:
    """Closed-form recovery of (x0, A) from the first d+1 observations.

    Forms the shifted windows X1 (columns 1..d) and X2 (columns 2..d+1),
    solves the propagator Phi = X2 X1^{-1}, takes A = logm(Phi)/delta_t and
    maps the first column back to t=0.  Requires noise-free input; on noisy
    or structurally deficient data X1 turns numerically singular.
    """
    d = obs.d
    if obs.n < d + 1:
        raise ValueError(f"need at least d+1 = {d + 1} observations, have {obs.n}")
    X1 = obs.values[:, 0:d]
    X2 = obs.values[:, 1:d + 1]
    svals = np.linalg.svd(X1, compute_uv=False)
    if svals[-1] <= tol.rank_rel * max(1.0, svals[0]):
        raise SingularWindowError(
            f"observation window is singular (sigma_min = {svals[-1]:.3e}); "
            "input is noisy or violates the independence condition")
    # Phi = X2 X1^{-1}  via a transposed solve, no explicit inverse.
    Phi = np.linalg.solve(X1.T, X2.T).T
    A = logm_real(Phi, tol.separation) / obs.delta_t
    if obs.t_start == 0.0:
        x0 = X1[:, 0].copy()
    else:
        x0 = expm(-A * obs.t_start) @ X1[:, 0]
    return SystemParams(x0=x0, A=A)
