"""DPMNL: perturbed-UCB assortment selection with private MLE and private Gram matrices."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from . import mnl
from .accountant import (
    EpsDeltaBudget,
    PrivacyLedger,
    ZcdpBudget,
    per_call_mle_budget_epsdelta,
)
from .private_cov import AggregationTree, GramRelease, calibrate_cov_noise, compute_lambda
from .private_mle import (
    InteractionLog,
    MleConvergenceError,
    PerturbationParams,
    calibrate_epsdelta,
    calibrate_zcdp,
    hessian_rank,
    inv_expm1,
    solve_perturbed_mle,
)

log = logging.getLogger(__name__)

LOG2 = math.log(2.0)


@dataclass(frozen=True)
class PolicyConfig:
    T: int
    T0: int
    K: int
    d: int
    D_MLE_cap: int = 20
    kappa: float = 1.0
    q: float = 0.5
    c_scale: float = 1e-4
    regime: str = "zcdp"  # "zcdp" or "epsdelta"
    rho1: float = 0.9
    rho2: float = 0.1
    eps1: float = 1.0
    delta1: float = 1e-9
    eps2: float = 1.0
    delta2: float = 1e-9
    noise_off: bool = False
    noise_off_ridge: float = 1e-6
    lambda_override: Optional[float] = None
    solver_tol: float = 1e-8
    solver_max_iter: int = 200

    def __post_init__(self):
        if not 1 <= self.T0 < self.T:
            raise ValueError(f"T0={self.T0} must satisfy 1 <= T0 < T={self.T}")
        if self.D_MLE_cap < 1:
            raise ValueError("D_MLE_cap must be at least 1")
        if self.K < 1 or self.d < 1:
            raise ValueError("K and d must be positive")
        if not 0 < self.q < 1:
            raise ValueError("q must lie in (0, 1)")
        if self.regime not in ("zcdp", "epsdelta"):
            raise ValueError(f"unknown regime {self.regime!r}")
        if not self.noise_off:
            if self.regime == "zcdp" and not (self.rho1 > 0 and self.rho2 > 0):
                raise ValueError("rho1 and rho2 must be positive")
            if self.regime == "epsdelta" and not (
                self.eps1 > 0 and self.eps2 > 0 and 0 < self.delta1 < 1 and 0 < self.delta2 < 1
            ):
                raise ValueError("invalid (epsilon, delta) budgets")

    @property
    def R(self) -> int:
        return hessian_rank(self.d, self.K)


def _zcdp_privacy_radius(cfg: PolicyConfig, T: int) -> float:
    """Ridge and noise contributions to the confidence radius (zCDP regime)."""
    if cfg.noise_off:
        return 0.0
    D, q, d, rho1 = cfg.D_MLE_cap, cfg.q, cfg.d, cfg.rho1
    ridge_term = 4.0 * inv_expm1((1.0 - q) * rho1 / (cfg.R * D))
    noise_term = (
        4.0 * D * math.sqrt(d) * (math.sqrt(d + 2.0 * q * rho1 / D) + math.sqrt(d)) / (q * rho1)
    ) * math.sqrt(math.log(T) / cfg.K)
    return ridge_term + noise_term


def compute_T0(
    d: int, K: int, T: int, sigma0: float, rho1: float, kappa: float = 1.0,
    q: float = 0.5, D_MLE: int = 1, C1: float = 1.0, C2: float = 1.0,
    rho1_infinite: bool = False,
) -> int:
    """Length of pure exploration guaranteeing a well-conditioned initial MLE.

    ``rho1_infinite`` drops the privacy terms (the non-private limit).
    """
    if not sigma0 > 0 or not kappa > 0:
        raise ValueError("sigma0 and kappa must be positive")
    if T < 2:
        raise ValueError("T must be at least 2")
    R = hessian_rank(d, K)
    inner = math.sqrt(0.5 * d * math.log1p(T / d) + math.log(T))
    if not rho1_infinite:
        if not rho1 > 0:
            raise ValueError("rho1 must be positive")
        inner += 4.0 * inv_expm1((1.0 - q) * rho1 / (R * D_MLE))
        inner += (
            4.0 * D_MLE * math.sqrt(d) * (math.sqrt(d + 2.0 * q * rho1 / D_MLE) + math.sqrt(d))
            / (q * rho1)
        ) * math.sqrt(math.log(T) / K)
    c_rho = inner**2 / kappa**2
    value = ((C1 * math.sqrt(d) + C2 * math.sqrt(2.0 * math.log(T))) / sigma0) ** 2 / K
    value += 2.0 * c_rho / (K * sigma0)
    return int(math.ceil(value))


def compute_confidence_width(
    t: int, cfg: PolicyConfig, lam: float, mle_params: Optional[PerturbationParams] = None,
    eps_mle: Optional[float] = None,
) -> float:
    """Unscaled confidence radius at round t (the policy multiplies by ``c_scale``)."""
    if t < 1:
        raise ValueError("t must be at least 1")
    d = cfg.d
    if cfg.regime == "zcdp" or cfg.noise_off:
        base = math.sqrt(0.5 * d * math.log1p(t / d) + math.log(t))
        return (base + _zcdp_privacy_radius(cfg, cfg.T)) / cfg.kappa + math.sqrt(3.0 * lam)
    if mle_params is None or eps_mle is None:
        raise ValueError("the (epsilon, delta) width needs the per-call MLE calibration")
    base = math.sqrt(0.5 * d * math.log1p((t + 1) / d) + math.log(t + 1))
    return (
        base
        + 4.0 * cfg.R / (eps_mle * math.sqrt(cfg.K))
        + math.sqrt(4.0 * d * math.log(cfg.T) * mle_params.sigma**2) / math.sqrt(cfg.K)
        + math.sqrt(3.0 * lam)
    )


@dataclass
class PolicyState:
    theta_hat: np.ndarray
    V: Optional[GramRelease]
    logdet_ref: float
    mle_calls: int
    tree: AggregationTree
    log: InteractionLog
    phase: str = "exploring"
    t: int = 0
    mle_failures: int = 0
    mle_call_rounds: list = field(default_factory=list)


class DPMNL:
    """One run of the policy. Call ``act`` then ``update`` once per round."""

    def __init__(
        self, cfg: PolicyConfig, rng_explore: np.random.Generator,
        rng_mle: np.random.Generator, rng_tree: np.random.Generator,
        ledger: Optional[PrivacyLedger] = None, frozen_theta=None,
    ):
        self.cfg = cfg
        self.rng_explore = rng_explore
        self.rng_mle = rng_mle
        self.ledger = ledger if ledger is not None else PrivacyLedger(cfg.regime)
        self.frozen_theta = None if frozen_theta is None else np.asarray(frozen_theta, float)
        d, K, T = cfg.d, cfg.K, cfg.T

        self.eps_mle: Optional[float] = None
        self.delta_mle: Optional[float] = None
        if cfg.noise_off:
            self.mle_params = PerturbationParams(cfg.noise_off_ridge, 0.0, cfg.q, R=cfg.R)
            sigma_cov = 0.0
        elif cfg.regime == "zcdp":
            self.mle_params = calibrate_zcdp(cfg.rho1 / cfg.D_MLE_cap, d, K, cfg.q)
            sigma_cov = calibrate_cov_noise(K, T, ZcdpBudget(cfg.rho2))
        else:
            per_call = per_call_mle_budget_epsdelta(cfg.eps1, cfg.delta1, cfg.D_MLE_cap)
            self.eps_mle, self.delta_mle = per_call.epsilon, per_call.delta
            self.mle_params = calibrate_epsdelta(per_call.epsilon, per_call.delta, d, K, cfg.q)
            sigma_cov = calibrate_cov_noise(K, T, EpsDeltaBudget(cfg.eps2, cfg.delta2))
        self.sigma_cov = sigma_cov

        if cfg.lambda_override is not None:
            self.lam = float(cfg.lambda_override)
        elif sigma_cov == 0.0:
            self.lam = 0.0
        else:
            self.lam = compute_lambda(sigma_cov, d, T)

        tree_regime = "epsdelta" if cfg.regime == "epsdelta" else "zcdp"
        tree = AggregationTree(d, T, sigma_cov, rng_tree, regime=tree_regime)
        if not cfg.noise_off:
            if cfg.regime == "zcdp":
                self.ledger.charge("tree_construction", "PrivateCov", cfg.rho2)
            else:
                self.ledger.charge("tree_construction", "PrivateCov", cfg.eps2, cfg.delta2)

        self.state = PolicyState(
            theta_hat=np.zeros(d), V=None, logdet_ref=-math.inf, mle_calls=0,
            tree=tree, log=InteractionLog(d, K, capacity=min(T, 4096)),
        )

    def confidence_width(self, t: int) -> float:
        return compute_confidence_width(t, self.cfg, self.lam, self.mle_params, self.eps_mle)

    def utilities(self, ctx: mnl.RoundContext, t: int) -> np.ndarray:
        """Optimistic utilities ``x.theta + c alpha_t ||x||_{V^-1}`` for every item."""
        st = self.state
        z = ctx.items @ st.theta_hat
        scale = self.cfg.c_scale * self.confidence_width(t)
        if scale != 0.0:
            w = solve_triangular(st.V.chol, ctx.items.T, lower=True, check_finite=False)
            z = z + scale * np.sqrt(np.einsum("ij,ij->j", w, w))
        return z

    def act(self, ctx: mnl.RoundContext) -> mnl.Assortment:
        t = self.state.t + 1
        K = min(self.cfg.K, ctx.n_items)
        if t <= self.cfg.T0:
            pick = self.rng_explore.choice(ctx.n_items, size=K, replace=False)
            return tuple(sorted(int(i) for i in pick))
        return mnl.best_assortment(self.utilities(ctx, t), ctx.revenues, K)

    def _refresh_mle(self, t: int) -> None:
        st, cfg = self.state, self.cfg
        st.mle_calls += 1
        st.mle_call_rounds.append(t)
        if not cfg.noise_off:
            if cfg.regime == "zcdp":
                self.ledger.charge(f"mle_call_{st.mle_calls}", "PrivateMLE", cfg.rho1 / cfg.D_MLE_cap)
            else:
                self.ledger.charge(
                    f"mle_call_{st.mle_calls}", "PrivateMLE", self.eps_mle, self.delta_mle
                )
        if self.frozen_theta is not None:
            st.theta_hat = self.frozen_theta.copy()
            return
        try:
            res = solve_perturbed_mle(
                st.log, self.mle_params, self.rng_mle, theta0=st.theta_hat,
                tol=cfg.solver_tol, max_iter=cfg.solver_max_iter,
            )
            st.theta_hat = res.theta_hat
        except MleConvergenceError as exc:
            st.mle_failures += 1
            log.warning("private MLE failed at t=%d (%s); keeping previous estimate", t, exc)

    def update(self, ctx: mnl.RoundContext, S, outcome: mnl.ChoiceOutcome) -> None:
        st, cfg = self.state, self.cfg
        st.t += 1
        t = st.t
        X = ctx.items[list(S)]
        st.log.append(X, outcome.position)
        st.tree.update(X.T @ X)
        if t < cfg.T0:
            return
        st.V = st.tree.release(self.lam)
        logdet = st.V.logdet
        if t == cfg.T0:
            st.phase = "exploiting"
            self._refresh_mle(t)
            st.logdet_ref = logdet
        elif logdet > LOG2 + st.logdet_ref and st.mle_calls < cfg.D_MLE_cap:
            self._refresh_mle(t)
            st.logdet_ref = logdet
