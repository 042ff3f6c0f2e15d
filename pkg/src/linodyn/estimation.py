"""Least-squares objective, analytic gradient and box-constrained fitting.

The mean squared trajectory misfit (1/n) sum_i ||y_i - exp(A t_i) x0||^2 is
minimized with a projected limited-memory quasi-Newton method.  Gradients
are analytic: the derivative of exp(A t) in a single entry of A has a
closed form through the eigendecomposition (Hadamard product with a
divided-difference matrix), with a decomposition-free fallback through the
exponential of a 2d x 2d block matrix for the spectra the closed form
cannot handle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ComplexSpectrumError, NearDegenerateError, NonFiniteError
from .linalg import EigenDecomp, as_square_matrix, eig_real, expm
from .model import ObservationSet, dim_from_theta_length, theta_length

_CURVATURE_EPS = 1e-10
_ARMIJO_C1 = 1e-4


def _try_eig(A):
    try:
        return eig_real(A)
    except (ComplexSpectrumError, NearDegenerateError):
        return None


def _u_matrix(lambdas, ts):
    """Divided-difference kernel U(t) for every t: diagonal t e^{l t},
    off-diagonal (e^{l_a t} - e^{l_b t})/(l_a - l_b)."""
    d = lambdas.shape[0]
    E = np.exp(np.outer(ts, lambdas))                       # (m, d)
    denom = np.subtract.outer(lambdas, lambdas) + np.eye(d)
    U = (E[:, :, None] - E[:, None, :]) / denom
    idx = np.arange(d)
    U[:, idx, idx] = ts[:, None] * E
    return U, E


def _eig_sens(dec: EigenDecomp, x0, ts):
    """Full sensitivity stack S(theta, t) for each t on the fast path.

    Returns (S, X): S has shape (m, d, d + d^2) with the exp(A t) block
    first and columns Z_jk(t) x0 in row-major (j, k) order; X holds the
    trajectory columns, shape (d, m).
    """
    Q, Qinv, lam = dec.Q, dec.Q_inv, dec.lambdas
    d = lam.shape[0]
    m = len(ts)
    U, E = _u_matrix(lam, ts)
    w = Qinv @ x0
    P = np.einsum("ia,ta,aj->tij", Q, E, Qinv)
    u = np.einsum("tab,kb->tak", U, Q * w[None, :])
    Zx = np.einsum("ia,aj,tak->tijk", Q, Qinv, u)
    S = np.empty((m, d, theta_length(d)))
    S[:, :, :d] = P
    S[:, :, d:] = Zx.reshape(m, d, d * d)
    X = Q @ (E.T * w[:, None])
    return S, X


def _block_matrices(A, dt):
    """exp(dt * [[A, E_jk], [0, A]]) for every entry (j, k), row-major."""
    d = A.shape[0]
    out = []
    for j in range(d):
        for k in range(d):
            M = np.zeros((2 * d, 2 * d))
            M[:d, :d] = A
            M[d:, d:] = A
            M[j, d + k] = 1.0
            out.append(expm(M * dt))
    return out

def _chain_sens(x0, A, t_start, dt, m):
    """Sensitivity stack on an equally-spaced grid without an
    eigendecomposition: running powers of the block propagators."""
    d = x0.shape[0]
    S = np.empty((m, d, theta_length(d)))
    X = np.empty((d, m))
    props = _block_matrices(A, dt)
    P0 = expm(A * t_start) if t_start != 0.0 else np.eye(d)
    R = P0.copy()                      # exp(A t_i), advanced by P = exp(A dt)
    P = props[0][:d, :d]
    u = np.zeros((2 * d, d * d))       # column c: [Z_c(t_i) x0; exp(A t_i) x0]
    if t_start == 0.0:
        u[d:] = x0[:, None]
    else:
        for c in range(d * d):
            j, k = divmod(c, d)
            M = np.zeros((2 * d, 2 * d))
            M[:d, :d] = A
            M[d:, d:] = A
            M[j, d + k] = 1.0
            B0 = expm(M * t_start)
            u[:d, c] = B0[:d, d:] @ x0
        u[d:] = (P0 @ x0)[:, None]
    stacked = np.stack(props)          # (d^2, 2d, 2d)
    for i in range(m):
        S[i, :, :d] = R
        S[i, :, d:] = u[:d]
        X[:, i] = u[d:, 0]
        if i + 1 < m:
            R = R @ P
            u = np.einsum("cij,jc->ic", stacked, u)
    return S, X


def _sens_stack(x0, A, t_start, dt, m):
    dec = _try_eig(A)
    ts = t_start + dt * np.arange(m)
    if dec is not None:
        return _eig_sens(dec, x0, ts)
    return _chain_sens(x0, A, t_start, dt, m)


def dexpm_da(A, t, j, k, method="auto"):
    """Derivative of exp(A t) with respect to entry A[j, k] (0-based).

    method "closed" forces the eigendecomposition form, "block" the
    augmented-matrix form; "auto" prefers closed and falls back.
    """
    A = as_square_matrix(A)
    d = A.shape[0]
    if not (0 <= j < d and 0 <= k < d):
        raise ValueError(f"entry ({j}, {k}) outside a {d}x{d} matrix")
    if t < 0:
        raise ValueError("t must be non-negative")
    if method not in ("auto", "closed", "block"):
        raise ValueError(f"unknown method {method!r}")
    dec = None
    if method in ("auto", "closed"):
        dec = _try_eig(A) if method == "auto" else eig_real(A)
    if dec is not None:
        U, _ = _u_matrix(dec.lambdas, np.array([float(t)]))
        outer = np.outer(dec.Q_inv[:, j], dec.Q[k, :])
        return dec.Q @ (outer * U[0]) @ dec.Q_inv
    M = np.zeros((2 * d, 2 * d))
    M[:d, :d] = A
    M[d:, d:] = A
    M[j, d + k] = 1.0
    return expm(M * float(t))[:d, d:]


def _split_theta(theta):
    theta = np.asarray(theta, dtype=float).reshape(-1)
    d = dim_from_theta_length(theta.shape[0])
    return theta[:d], theta[d:].reshape(d, d), d


def _check_obs(d, obs):
    if obs.d != d:
        raise ValueError(f"theta is for dimension {d} but observations have {obs.d}")


def objective(theta, obs: ObservationSet) -> float:
    """Mean squared misfit M_n(theta) over the observation grid."""
    x0, A, d = _split_theta(theta)
    _check_obs(d, obs)
    dec = _try_eig(A)
    if dec is not None:
        ts = obs.times
        w = dec.Q_inv @ x0
        E = np.exp(np.outer(dec.lambdas, ts))
        X = dec.Q @ (E * w[:, None])
    else:
        X = _chain_traj(x0, A, obs.t_start, obs.delta_t, obs.n)
    R = obs.values - X
    return float(np.sum(R * R) / obs.n)


def _chain_traj(x0, A, t_start, dt, m):
    P = expm(A * dt)
    v = x0 if t_start == 0.0 else expm(A * t_start) @ x0
    X = np.empty((x0.shape[0], m))
    for i in range(m):
        X[:, i] = v
        if i + 1 < m:
            v = P @ v
    return X


def value_and_gradient(theta, obs: ObservationSet):
    """Objective and its analytic gradient, packed like theta.

    One eigendecomposition of A is shared across all time points; on the
    fallback path the block propagator chains provide the same quantities.
    """
    x0, A, d = _split_theta(theta)
    _check_obs(d, obs)
    n = obs.n
    dec = _try_eig(A)
    if dec is None:
        S, X = _chain_sens(x0, A, obs.t_start, obs.delta_t, n)
        R = obs.values - X
        f = float(np.sum(R * R) / n)
        g = -2.0 / n * np.einsum("tia,it->a", S, R)
        return f, g
    Q, Qinv, lam = dec.Q, dec.Q_inv, dec.lambdas
    ts = obs.times
    U, E = _u_matrix(lam, ts)               # (m,d,d), (m,d)
    w = Qinv @ x0
    X = Q @ (E.T * w[:, None])              # (d, m)
    R = obs.values - X
    f = float(np.sum(R * R) / n)
    Rt = Q.T @ R                            # (d, m): rows indexed by eigvec
    # x0 block:  -2/n sum_i P_i^T r_i  with  P^T r = Qinv^T (E * Q^T r)
    gx0 = -2.0 / n * (Qinv.T @ np.einsum("ta,at->a", E, Rt))
    # A block:   entry (j,k): -2/n sum_i r_i^T Z_jk(t_i) x0, factorized so
    # the (m,d,d,d) tensor never materializes.
    u = np.einsum("tab,kb->tak", U, Q * w[None, :])
    C = np.einsum("at,tak->ak", Rt, u)
    gA = -2.0 / n * (Qinv.T @ C)
    return f, np.concatenate([gx0, gA.ravel()])


def gradient(theta, obs: ObservationSet) -> np.ndarray:
    """Analytic gradient of the objective, packed like theta."""
    return value_and_gradient(theta, obs)[1]


@dataclass(frozen=True)
class FitOptions:
    """Box bounds, starting point and stopping tolerances for `fit`."""

    init: np.ndarray
    bounds_lower: np.ndarray
    bounds_upper: np.ndarray
    grad_tol: float = 1e-10
    step_tol: float = 1e-12
    max_iters: int = 500
    memory: int = 10
    polish: bool = True

    def __post_init__(self):
        init = np.asarray(self.init, dtype=float).reshape(-1)
        lb = np.asarray(self.bounds_lower, dtype=float).reshape(-1)
        ub = np.asarray(self.bounds_upper, dtype=float).reshape(-1)
        dim_from_theta_length(init.shape[0])
        if lb.shape != init.shape or ub.shape != init.shape:
            raise ValueError("bounds must have the same shape as init")
        if np.any(lb > init) or np.any(init > ub):
            raise ValueError("init must satisfy lower <= init <= upper")
        if not (self.grad_tol > 0 and self.step_tol > 0):
            raise ValueError("tolerances must be positive")
        object.__setattr__(self, "init", init)
        object.__setattr__(self, "bounds_lower", lb)
        object.__setattr__(self, "bounds_upper", ub)

    @classmethod
    def around(cls, theta, halfwidth=10.0, offset=0.0, **kw):
        """Box of the given halfwidth centred on theta, start at
        theta - offset.  The default +-10 box is a pragmatic stand-in when
        no problem knowledge is available."""
        theta = np.asarray(theta, dtype=float).reshape(-1)
        return cls(init=theta - offset, bounds_lower=theta - halfwidth,
                   bounds_upper=theta + halfwidth, **kw)


@dataclass(frozen=True)
class EstimationResult:
    theta_hat: np.ndarray
    objective: float
    grad_norm: float
    iterations: int
    converged: bool
    active_bounds: np.ndarray


def _projected_gradient(x, g, lb, ub):
    pg = g.copy()
    pg[(x <= lb) & (g > 0)] = 0.0
    pg[(x >= ub) & (g < 0)] = 0.0
    return pg


def _two_loop(g, pairs, gamma):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    r = gamma * q
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ r)
        r += (a - b) * s
    return r


def _ensure_finite(f, g, theta):
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteError("objective or gradient is non-finite", theta=theta)


def fit(obs: ObservationSet, opts: FitOptions) -> EstimationResult:
    """Minimize the misfit over the box with projected L-BFGS.

    Descent directions come from a limited-memory secant approximation;
    steps are backtracked along the projection arc until the Armijo
    sufficient-decrease condition holds, so accepted objective values are
    non-increasing.  After first-order convergence an interior solution is
    polished with a few Gauss-Newton steps to push the gradient toward
    machine level.
    """
    lb, ub = opts.bounds_lower, opts.bounds_upper
    x = np.clip(opts.init, lb, ub)
    f, g = value_and_gradient(x, obs)
    _ensure_finite(f, g, x)
    pairs = []
    gamma = 1.0
    converged = False
    iters = 0
    for iters in range(opts.max_iters):
        pg = _projected_gradient(x, g, lb, ub)
        if np.max(np.abs(pg)) <= opts.grad_tol:
            converged = True
            break
        direction = -_two_loop(g, pairs, gamma)
        if direction @ g > -1e-14 * np.linalg.norm(direction) * np.linalg.norm(g):
            direction = -pg
        accepted = False
        for direction in (direction, -pg):
            alpha = 1.0
            for _ in range(40):
                xn = np.clip(x + alpha * direction, lb, ub)
                step = xn - x
                if not np.any(step):
                    break
                fn = objective(xn, obs)
                if np.isfinite(fn) and fn <= f + _ARMIJO_C1 * (g @ step):
                    accepted = True
                    break
                alpha *= 0.5
            if accepted:
                break
        if not accepted:
            # No admissible decrease left along either direction; treat the
            # point as stationary at the achievable resolution.
            converged = True
            break
        s = xn - x
        fn, gn = value_and_gradient(xn, obs)
        _ensure_finite(fn, gn, xn)
        y = gn - g
        sy = s @ y
        if sy > _CURVATURE_EPS * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y, 1.0 / sy))
            if len(pairs) > opts.memory:
                pairs.pop(0)
            gamma = sy / (y @ y)
        x, f, g = xn, fn, gn
        if np.max(np.abs(s)) <= opts.step_tol:
            converged = True
            iters += 1
            break
    else:
        iters = opts.max_iters
    if converged and opts.polish:
        x, f, g = _polish(x, f, g, obs, lb, ub)
    pg = _projected_gradient(x, g, lb, ub)
    at_bound = (x <= lb) | (x >= ub)
    return EstimationResult(theta_hat=x, objective=f,
                            grad_norm=float(np.max(np.abs(pg))),
                            iterations=iters, converged=converged,
                            active_bounds=np.flatnonzero(at_bound))


def _polish(x, f, g, obs, lb, ub, max_steps=5):
    """Gauss-Newton refinement of an interior first-order point."""
    if np.any((x <= lb) | (x >= ub)):
        return x, f, g
    n = obs.n
    for _ in range(max_steps):
        if np.max(np.abs(g)) <= 1e-13 * max(1.0, abs(f)):
            break
        x0, A, d = _split_theta(x)
        S, X = _sens_stack(x0, A, obs.t_start, obs.delta_t, n)
        R = obs.values - X
        gram = np.einsum("tia,tib->ab", S, S)
        gram[np.diag_indices_from(gram)] += 1e-12 * max(1.0, np.trace(gram) / gram.shape[0])
        rhs = np.einsum("tia,it->a", S, R)
        try:
            delta = np.linalg.solve(gram, rhs)
        except np.linalg.LinAlgError:
            break
        xn = x + delta
        if np.any(xn < lb) or np.any(xn > ub):
            break
        fn, gn = value_and_gradient(xn, obs)
        if not np.isfinite(fn) or fn > f + 1e-15 * max(1.0, abs(f)):
            break
        x, f, g = xn, fn, gn
    return x, f, g
