"""Objective-perturbed maximum likelihood for the MNL model.

The private estimate minimizes

    sum_n nll_n(theta) + (ridge / 2) ||theta||^2 + b . theta,   b ~ N(0, sigma^2 I)

with ``ridge`` and ``sigma`` calibrated to a zCDP or (epsilon, delta) budget.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

GRAD_BOUND = 2.0  # L: per-record gradient norm bound when ||x|| <= 1
HESS_BOUND = 4.0  # eta: per-record Hessian eigenvalue bound


class MleConvergenceError(RuntimeError):
    """Newton solve did not reach the gradient tolerance."""

    def __init__(self, message, theta, residual, iterations):
        super().__init__(message)
        self.theta = theta
        self.residual = residual
        self.iterations = iterations


def inv_expm1(x: float) -> float:
    """``1 / (e^x - 1)``, returning 0 once ``e^x`` overflows."""
    return 0.0 if x > 709.0 else 1.0 / math.expm1(x)


def hessian_rank(d: int, K: int) -> int:
    """Rank used in the calibration, ``min(d, K - 1)`` floored at 1."""
    return max(1, min(d, K - 1))


@dataclass(frozen=True)
class PerturbationParams:
    ridge: float  # Delta
    sigma: float  # sigma_MLE; 0 disables the linear noise term
    q: float = 0.5
    L: float = GRAD_BOUND
    eta: float = HESS_BOUND
    R: int = 1
    regime: str = "zcdp"


def calibrate_zcdp(
    rho_per_call: float, d: int, K: int, q: float = 0.5,
    L: float = GRAD_BOUND, eta: float = HESS_BOUND,
) -> PerturbationParams:
    """Smallest ridge and noise scale giving ``rho_per_call``-zCDP for one solve."""
    if not 0 < q < 1:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    if not rho_per_call > 0:
        raise ValueError("rho_per_call must be positive")
    R = hessian_rank(d, K)
    ridge = eta * inv_expm1((1.0 - q) * rho_per_call / R)
    sigma = L * (math.sqrt(d + 2.0 * q * rho_per_call) + math.sqrt(d)) / (q * rho_per_call)
    return PerturbationParams(ridge, sigma, q, L, eta, R, "zcdp")


def calibrate_epsdelta(
    eps: float, delta: float, d: int, K: int, q: float = 0.5,
    L: float = GRAD_BOUND, eta: float = HESS_BOUND,
) -> PerturbationParams:
    """Ridge and noise scale giving (eps, delta)-DP for one solve."""
    if not 0 < q < 1:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    if not eps > 0 or not 0 < delta < 1:
        raise ValueError(f"invalid budget ({eps}, {delta})")
    R = hessian_rank(d, K)
    x = math.log(2.0 / delta)
    a = d + 2.0 * math.sqrt(d * x) + 2.0 * x
    ridge = (1.0 - q) * R * eta / eps
    sigma = L * (math.sqrt(a) + math.sqrt(a + 2.0 * q * eps)) / (q * eps)
    return PerturbationParams(ridge, sigma, q, L, eta, R, "epsdelta")


class InteractionLog:
    """Append-only store of (offered features, chosen position) records.

    Records are kept in padded arrays of shape (n, k_max, d) with a mask;
    position 0 means no purchase, k >= 1 the k-th offered item.
    """

    def __init__(self, d: int, k_max: int, capacity: int = 256):
        self.d = d
        self.k_max = k_max
        self._X = np.zeros((capacity, k_max, d))
        self._mask = np.zeros((capacity, k_max), dtype=bool)
        self._pos = np.zeros(capacity, dtype=np.int64)
        self._n = 0

    def __len__(self) -> int:
        return self._n

    def append(self, X_offered, position: int) -> None:
        X_offered = np.asarray(X_offered, dtype=float)
        k = X_offered.shape[0]
        if X_offered.ndim != 2 or X_offered.shape[1] != self.d:
            raise ValueError(f"offered features must be (k, {self.d}), got {X_offered.shape}")
        if not 1 <= k <= self.k_max:
            raise ValueError(f"assortment size {k} outside [1, {self.k_max}]")
        if not 0 <= position <= k:
            raise ValueError(f"chosen position {position} inconsistent with |S|={k}")
        if self._n == self._X.shape[0]:
            self._grow()
        i = self._n
        self._X[i, :k] = X_offered
        self._X[i, k:] = 0.0
        self._mask[i, :k] = True
        self._mask[i, k:] = False
        self._pos[i] = position
        self._n += 1

    def _grow(self):
        cap = 2 * self._X.shape[0]
        for name in ("_X", "_mask", "_pos"):
            old = getattr(self, name)
            new = np.zeros((cap,) + old.shape[1:], dtype=old.dtype)
            new[: self._n] = old[: self._n]
            setattr(self, name, new)

    def arrays(self):
        n = self._n
        return self._X[:n], self._mask[:n], self._pos[:n]


def nll_eval(log: InteractionLog, theta, with_hessian: bool = True):
    """Negative log-likelihood, gradient and Hessian summed over the log."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (log.d,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({log.d},)")
    X, mask, pos = log.arrays()
    d = log.d
    if X.shape[0] == 0:
        return 0.0, np.zeros(d), np.zeros((d, d))
    u = X @ theta
    u = np.where(mask, u, -np.inf)
    shift = np.maximum(u.max(axis=1), 0.0)
    w = np.exp(u - shift[:, None])
    w0 = np.exp(-shift)
    denom = w0 + w.sum(axis=1)
    p = w / denom[:, None]

    rows = np.arange(X.shape[0])
    bought = pos > 0
    chosen_u = np.zeros(X.shape[0])
    chosen_u[bought] = u[rows[bought], pos[bought] - 1]
    value = float(np.sum(shift + np.log(denom) - chosen_u))

    xbar = np.einsum("nk,nkd->nd", p, X)
    x_chosen = np.zeros((X.shape[0], d))
    x_chosen[bought] = X[rows[bought], pos[bought] - 1]
    grad = (xbar - x_chosen).sum(axis=0)
    if not with_hessian:
        return value, grad, None
    Xf = X.reshape(-1, d)
    hess = (Xf * p.reshape(-1, 1)).T @ Xf - xbar.T @ xbar
    hess = 0.5 * (hess + hess.T)
    return value, grad, hess


def record_gradients(log: InteractionLog, theta) -> np.ndarray:
    """Per-record gradients, shape (n, d)."""
    X, mask, pos = log.arrays()
    u = np.where(mask, X @ theta, -np.inf)
    shift = np.maximum(u.max(axis=1), 0.0)
    w = np.exp(u - shift[:, None])
    p = w / (np.exp(-shift) + w.sum(axis=1))[:, None]
    g = np.einsum("nk,nkd->nd", p, X)
    bought = pos > 0
    rows = np.arange(X.shape[0])
    g[bought] -= X[rows[bought], pos[bought] - 1]
    return g


@dataclass
class MleResult:
    theta_hat: np.ndarray
    grad_residual_norm: float
    iterations: int
    # retained for white-box tests only; never serialized
    noise: Optional[np.ndarray] = None


def _objective(log, theta, ridge, b, with_hessian=True):
    v, g, h = nll_eval(log, theta, with_hessian)
    v += 0.5 * ridge * float(theta @ theta) + float(b @ theta)
    g = g + ridge * theta + b
    if h is not None:
        h = h + ridge * np.eye(theta.size)
    return v, g, h


def minimize_perturbed(
    log: InteractionLog, ridge: float, b: np.ndarray, theta0=None,
    tol: float = 1e-8, max_iter: int = 200,
):
    """Damped Newton with Armijo backtracking; returns (theta, residual, iterations)."""
    d = log.d
    theta = np.zeros(d) if theta0 is None else np.array(theta0, dtype=float)
    v, g, h = _objective(log, theta, ridge, b)
    gnorm = float(np.linalg.norm(g))
    best = (gnorm, theta.copy())
    it = 0
    while gnorm > tol and it < max_iter:
        it += 1
        try:
            c = np.linalg.cholesky(h)
            step = -np.linalg.solve(c.T, np.linalg.solve(c, g))
        except np.linalg.LinAlgError:
            step = -g
        slope = float(g @ step)
        if slope >= 0:
            step, slope = -g, -float(g @ g)
        slack = 8 * np.finfo(float).eps * max(1.0, abs(v))
        alpha = 1.0
        accepted = False
        while alpha > 1e-12:
            cand = theta + alpha * step
            v_new, g_new, h_new = _objective(log, cand, ridge, b)
            if v_new <= v + 1e-4 * alpha * slope + slack:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        theta, v, g, h = cand, v_new, g_new, h_new
        gnorm = float(np.linalg.norm(g))
        if gnorm < best[0]:
            best = (gnorm, theta.copy())
    if best[0] > tol:
        raise MleConvergenceError(
            f"Newton stopped after {it} iterations with residual {best[0]:.3e}",
            best[1], best[0], it,
        )
    return best[1], best[0], it


def solve_perturbed_mle(
    log: InteractionLog, params: PerturbationParams, rng: Optional[np.random.Generator] = None,
    theta0=None, tol: float = 1e-8, max_iter: int = 200, noise=None,
) -> MleResult:
    """Draw b ~ N(0, sigma^2 I) and minimize the perturbed objective.

    ``noise`` overrides the draw (test hook); with ``sigma == 0`` no draw is made.
    """
    if not params.ridge > 0:
        raise ValueError("ridge must be positive for a unique minimizer")
    d = log.d
    if noise is not None:
        b = np.asarray(noise, dtype=float)
    elif params.sigma > 0:
        if rng is None:
            raise ValueError("an rng is required when sigma > 0")
        b = rng.normal(0.0, params.sigma, size=d)
    else:
        b = np.zeros(d)
    theta, res, it = minimize_perturbed(log, params.ridge, b, theta0, tol, max_iter)
    return MleResult(theta, res, it, b)
