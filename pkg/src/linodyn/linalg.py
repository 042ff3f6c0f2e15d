"""Dense small-matrix kernels: matrix exponential, real eigendecomposition,
real matrix logarithm and singular values.

Everything here is sized for the tiny systems this package works with
(d up to ~10); robustness is preferred over speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ComplexSpectrumError,
    NearDegenerateError,
    NonPositiveEigenvalueError,
)

# Default relative tolerance on the minimum eigenvalue gap.  Divided
# differences of exp lose roughly half the digits of the gap, so anything
# tighter than ~1e-8 is unusable downstream anyway.
SEPARATION_TOL = 1e-8

_IMAG_TOL = 1e-9

# Pade-13 numerator coefficients for expm (denominator is the same with
# alternating signs).
_PADE13 = (
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
)


def as_square_matrix(M, name="matrix"):
    """Validate and return a float64 square matrix with finite entries."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite entries")
    return M


def expm(M):
    """Matrix exponential by Pade-13 with scaling and squaring.

    The argument is scaled by 2**-s until its 1-norm is at most 0.5, which
    keeps the rational approximation far inside its accuracy region.
    """
    M = as_square_matrix(M)
    d = M.shape[0]
    if d == 1:
        return np.array([[math.exp(M[0, 0])]])
    norm = np.linalg.norm(M, 1)
    if norm == 0.0:
        return np.eye(d)
    s = max(0, int(math.ceil(math.log2(norm / 0.5))))
    A = M / (2.0 ** s)
    ident = np.eye(d)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A2 @ A4
    b = _PADE13
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
             + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
         + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident)
    R = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        R = R @ R
    return R


@dataclass(frozen=True)
class EigenDecomp:
    """Real eigendecomposition A = Q diag(lambdas) Q_inv."""

    Q: np.ndarray
    lambdas: np.ndarray
    Q_inv: np.ndarray
    min_separation: float

    @property
    def dim(self):
        return self.lambdas.shape[0]


def eig_real(M, separation_tol=SEPARATION_TOL):
    """Eigendecomposition restricted to distinct real spectra.

    Raises ComplexSpectrumError or NearDegenerateError when the matrix does
    not have d well-separated real eigenvalues; callers treat either as a
    signal to switch to decomposition-free code paths.
    """
    M = as_square_matrix(M)
    d = M.shape[0]
    w, Q = np.linalg.eig(M)
    scale = max(1.0, float(np.abs(w).max()))
    if np.abs(w.imag).max() > _IMAG_TOL * scale:
        raise ComplexSpectrumError(
            f"eigenvalues have imaginary parts up to {np.abs(w.imag).max():.3e}")
    lam = w.real.copy()
    Q = Q.real.copy()
    if d > 1:
        order = np.argsort(lam)[::-1]
        lam = lam[order]
        Q = Q[:, order]
        min_sep = float(np.min(np.abs(np.subtract.outer(lam, lam))
                               + np.eye(d) * np.inf))
    else:
        min_sep = math.inf
    if min_sep < separation_tol * scale:
        raise NearDegenerateError(
            f"minimum eigenvalue separation {min_sep:.3e} below tolerance",
            min_separation=min_sep)
    # Deterministic sign convention: largest-magnitude component positive.
    for j in range(d):
        k = np.argmax(np.abs(Q[:, j]))
        if Q[k, j] < 0:
            Q[:, j] = -Q[:, j]
    Q_inv = np.linalg.inv(Q)
    # An inaccurate reconstruction means the eigenbasis is too ill
    # conditioned to be useful even though the gap check passed.
    normM = np.linalg.norm(M, "fro")
    resid = np.linalg.norm((Q * lam) @ Q_inv - M, "fro")
    if resid > 1e-10 * max(1.0, normM):
        raise NearDegenerateError(
            f"eigenbasis reconstruction residual {resid:.3e} too large",
            min_separation=min_sep)
    if np.linalg.norm(Q @ Q_inv - np.eye(d), "fro") > 1e-10 * d:
        raise NearDegenerateError(
            "eigenbasis inverse residual too large", min_separation=min_sep)
    return EigenDecomp(Q=Q, lambdas=lam, Q_inv=Q_inv, min_separation=min_sep)


def logm_real(M, separation_tol=SEPARATION_TOL):
    """Unique real logarithm of a matrix with distinct positive real spectrum."""
    M = as_square_matrix(M)
    dec = eig_real(M, separation_tol)
    if np.any(dec.lambdas <= 0.0):
        raise NonPositiveEigenvalueError(
            f"matrix has eigenvalue {dec.lambdas.min():.6g} <= 0; "
            "no real logarithm on this branch")
    return (dec.Q * np.log(dec.lambdas)) @ dec.Q_inv


def min_singular_value(M):
    """Smallest singular value of a square matrix."""
    M = as_square_matrix(M)
    return float(np.linalg.svd(M, compute_uv=False)[-1])
