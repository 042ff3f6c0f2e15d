"""Sandwich covariance of the least-squares estimator and the inference
built on it: confidence regions, pointwise intervals and per-entry
causal-edge tests.

The covariance of sqrt(n)(theta_hat - theta) is H^{-1} V H^{-1}, where H
is the Gram integral of the trajectory sensitivity S(theta, t) over the
observation horizon and V the matching noise-weighted integral.  Degraded
observation paths reuse the same integrals at the transformed parameters
and horizon, conjugated by the Jacobian of the inverse parameter map.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .degraded import AGGREGATED, TIME_SCALED, DegradedSpec, forward_params, g_gradient
from .errors import NotPositiveDefiniteError
from .estimation import _sens_stack, _split_theta
from .model import ObservationSet, pack, theta_index, trajectory, unpack
from .special import chi2_quantile, normal_quantile

DEFAULT_PANELS = 1024


@dataclass(frozen=True)
class CovarianceReport:
    """H, V and the sandwich for one observation path."""

    H: np.ndarray
    V: np.ndarray
    sigma_n: np.ndarray
    path: str
    T_effective: float
    theta_at: np.ndarray
    sigma_used: np.ndarray
    quadrature_panels: int

    @property
    def dim(self):
        return self.sigma_used.shape[0]


def sensitivity(theta, t) -> np.ndarray:
    """Jacobian of the trajectory map at time t with respect to theta.

    Block layout: d columns of exp(A t), then Z_jk(t) x0 in packing order.
    """
    x0, A, d = _split_theta(theta)
    if t < 0:
        raise ValueError("t must be non-negative")
    S, _ = _sens_stack(x0, A, float(t), 1.0, 1)
    return S[0]


def _simpson_weights(T, panels):
    if panels < 2 or panels % 2 != 0:
        raise ValueError("panel count must be even and at least 2")
    w = np.ones(panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (T / panels) / 3.0


def _gram_integrals(theta, T, panels, weight=None):
    """Simpson approximation of int_0^T S^T W S dt with W = diag(weight)."""
    x0, A, _ = _split_theta(theta)
    if not T > 0:
        raise ValueError("T must be positive")
    w = _simpson_weights(T, panels)
    S, _ = _sens_stack(x0, A, 0.0, T / panels, panels + 1)
    if weight is None:
        M = np.einsum("t,tia,tib->ab", w, S, S)
    else:
        M = np.einsum("t,tia,i,tib->ab", w, S, weight, S)
    return 0.5 * (M + M.T)


def h_matrix(theta, T, panels=DEFAULT_PANELS) -> np.ndarray:
    """Curvature matrix 2/T int_0^T S(theta,t)^T S(theta,t) dt."""
    return 2.0 / T * _gram_integrals(theta, T, panels)


def v_matrix(theta, T, noise_var, panels=DEFAULT_PANELS) -> np.ndarray:
    """Gradient-variance limit 4/T int_0^T S^T diag(noise_var) S dt.

    `noise_var` holds per-coordinate noise variances (sigma_j^2).
    """
    _, _, d = _split_theta(theta)
    nv = np.asarray(noise_var, dtype=float).reshape(-1)
    if nv.shape[0] != d:
        raise ValueError(f"need {d} noise variances, got {nv.shape[0]}")
    if np.any(nv <= 0):
        raise ValueError("noise variances must be positive")
    return 4.0 / T * _gram_integrals(theta, T, panels, weight=nv)


def _chol(M, what):
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError(
            f"{what} is not positive definite; the system is not "
            "identifiable at this parameter") from None


def _chol_solve(L, B):
    y = np.linalg.solve(L, B)
    return np.linalg.solve(L.T, y)


def sandwich(theta, T, noise_var, degraded: DegradedSpec | None = None,
             n_original=None, panels=DEFAULT_PANELS) -> CovarianceReport:
    """Asymptotic covariance of sqrt(n)(theta_hat - theta).

    `theta`, `T` and `noise_var` always describe the *original* system and
    grid.  With a DegradedSpec the integrals run at the transformed
    parameters over the effective horizon (which for aggregation needs the
    original sample count `n_original`), and the result is conjugated back
    through the Jacobian of the inverse map.  All solves use Cholesky
    factors; a failure surfaces as NotPositiveDefiniteError.
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    _, _, d = _split_theta(theta)
    nv = np.asarray(noise_var, dtype=float).reshape(-1)
    if degraded is None or (degraded.mode == AGGREGATED and degraded.k == 1) \
            or (degraded.mode == TIME_SCALED and degraded.k == 1):
        H = h_matrix(theta, T, panels)
        V = v_matrix(theta, T, nv, panels)
        L = _chol(H, "H")
        sig = _chol_solve(L, _chol_solve(L, V).T)
        return CovarianceReport(H=H, V=V, sigma_n=0.5 * (sig + sig.T),
                                path="original", T_effective=float(T),
                                theta_at=theta, sigma_used=nv,
                                quadrature_panels=panels)
    params_tilde = forward_params(unpack(theta), degraded)
    theta_tilde = pack(params_tilde)
    if degraded.mode == AGGREGATED:
        if n_original is None:
            raise ValueError("aggregated sandwich needs the original sample "
                             "count n_original to size the effective horizon")
        n = int(n_original)
        k = degraded.k
        T_eff = (n // k - 1) * k * T / (n - 1)
        H = h_matrix(theta_tilde, T_eff, panels)
        V = v_matrix(theta_tilde, T_eff, nv, panels) / k
        path = f"aggregated({k})"
    else:
        k = degraded.k
        T_eff = k * T
        H = h_matrix(theta_tilde, T_eff, panels)
        V = v_matrix(theta_tilde, T_eff, nv, panels)
        path = f"time_scaled({k:g})"
    G = g_gradient(theta_tilde, degraded)
    L = _chol(H, "H")
    inner = _chol_solve(L, _chol_solve(L, V).T)
    sig = G @ inner @ G.T
    return CovarianceReport(H=H, V=V, sigma_n=0.5 * (sig + sig.T), path=path,
                            T_effective=float(T_eff), theta_at=theta,
                            sigma_used=nv, quadrature_panels=panels)


def cr_test(theta_hat, theta_ref, cov: CovarianceReport, n, alpha):
    """Confidence-region membership of theta_ref at level 1 - alpha.

    Returns (statistic, critical, inside) with the statistic
    n (theta_hat - theta_ref)^T sigma_n^{-1} (theta_hat - theta_ref);
    on degraded paths pass the degraded sample count for n.
    """
    theta_hat = np.asarray(theta_hat, dtype=float).reshape(-1)
    theta_ref = np.asarray(theta_ref, dtype=float).reshape(-1)
    if theta_hat.shape != theta_ref.shape:
        raise ValueError("theta_hat and theta_ref must have the same length")
    delta = theta_hat - theta_ref
    L = _chol(cov.sigma_n, "sigma_n")
    half = np.linalg.solve(L, delta)
    statistic = float(n * (half @ half))
    critical = chi2_quantile(theta_hat.shape[0], 1.0 - alpha)
    return statistic, critical, statistic <= critical


def pointwise_cis(theta_hat, cov: CovarianceReport, n, alpha):
    """Componentwise intervals theta_i +- z_{alpha/2} sqrt(sigma_n[i,i]/n).

    Tiny negative diagonal entries (numerical) are clamped to zero with a
    warning.
    """
    theta_hat = np.asarray(theta_hat, dtype=float).reshape(-1)
    diag = np.diag(cov.sigma_n).copy()
    if np.any(diag < 0):
        warnings.warn("negative variance diagonal clamped to zero",
                      RuntimeWarning, stacklevel=2)
        diag = np.maximum(diag, 0.0)
    z = normal_quantile(1.0 - alpha / 2.0)
    half = z * np.sqrt(diag / n)
    return theta_hat - half, theta_hat + half


def edge_test(theta_hat, cov: CovarianceReport, n, alpha) -> np.ndarray:
    """Per-entry test of a_jk = 0: entry (j, k) is True when zero lies
    outside the 1 - alpha interval of a_jk, i.e. the edge k -> j is kept."""
    theta_hat = np.asarray(theta_hat, dtype=float).reshape(-1)
    _, A_hat, d = _split_theta(theta_hat)
    diag = np.maximum(np.diag(cov.sigma_n), 0.0)
    z = normal_quantile(1.0 - alpha / 2.0)
    reject = np.zeros((d, d), dtype=bool)
    for j in range(d):
        for k in range(d):
            idx = theta_index(d, j, k)
            reject[j, k] = abs(A_hat[j, k]) > z * np.sqrt(diag[idx] / n)
    return reject


def estimate_noise_variance(theta, obs: ObservationSet) -> np.ndarray:
    """Per-coordinate mean squared residual at theta.

    Offered for the case where the noise level is unknown; experiments that
    know the generating noise should pass it directly.
    """
    params = unpack(np.asarray(theta, dtype=float).reshape(-1))
    resid = obs.values - trajectory(params, obs.times)
    return np.mean(resid * resid, axis=1)


@dataclass(frozen=True)
class InferenceOutcome:
    """Bundle produced by the CLI `infer` command."""

    cr_statistic: float | None
    cr_critical: float | None
    theta_in_cr: bool | None
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    edge_rejections: np.ndarray
    alpha: float
    n_used: int


def infer(theta_hat, cov: CovarianceReport, n, alpha,
          theta_ref=None) -> InferenceOutcome:
    """Assemble intervals, edge decisions and (optionally) a CR membership
    check against a reference parameter."""
    lower, upper = pointwise_cis(theta_hat, cov, n, alpha)
    reject = edge_test(theta_hat, cov, n, alpha)
    stat = crit = inside = None
    if theta_ref is not None:
        stat, crit, inside = cr_test(theta_hat, theta_ref, cov, n, alpha)
    return InferenceOutcome(cr_statistic=stat, cr_critical=crit,
                            theta_in_cr=inside, ci_lower=lower,
                            ci_upper=upper, edge_rejections=reject,
                            alpha=float(alpha), n_used=int(n))
