"""Continual release of noisy Gram matrices via tree-based aggregation."""
from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np

from .accountant import EpsDeltaBudget, ZcdpBudget


def tree_depth(T: int) -> int:
    """Number of levels ``m = 1 + floor(log2 T)``."""
    if T < 1:
        raise ValueError("T must be at least 1")
    return T.bit_length()


def sensitivity_bound(K: int) -> float:
    """Frobenius sensitivity of one user's Gram contribution, sqrt(2K)."""
    if K < 1:
        raise ValueError("K must be at least 1")
    return math.sqrt(2.0 * K)


def calibrate_cov_noise(K: int, T: int, budget: Union[ZcdpBudget, EpsDeltaBudget]) -> float:
    """Per-entry noise scale of each tree node for the whole-tree budget."""
    if K < 1 or T < 1:
        raise ValueError("K and T must be at least 1")
    m = tree_depth(T)
    if isinstance(budget, ZcdpBudget):
        return math.sqrt(K * m / budget.rho)
    if isinstance(budget, EpsDeltaBudget):
        if not budget.epsilon > 0 or not budget.delta > 0:
            raise ValueError("epsilon and delta must be positive")
        return math.sqrt(32.0 * m * K * math.log(4.0 / budget.delta) ** 2 / budget.epsilon**2)
    raise TypeError(f"unsupported budget type {type(budget).__name__}")


def compute_lambda(sigma: float, d: int, T: int) -> float:
    """Shift making ``noise + 2 lambda I`` positive definite with high probability."""
    if d < 2:
        raise ValueError("compute_lambda needs d >= 2; supply lambda manually for d = 1")
    if T < 1:
        raise ValueError("T must be at least 1")
    m = tree_depth(T)
    ld = math.log(d)
    r = (ld / d) ** (1.0 / 3.0)
    bracket = (
        2.0 * math.sqrt(d)
        + 2.0 * d ** (1.0 / 6.0) * ld ** (1.0 / 3.0)
        + 6.0 * (1.0 + r) * math.sqrt(ld) / math.sqrt(math.log1p(r))
        + 2.0 * math.sqrt(4.0 * math.log(T))
    )
    return sigma * math.sqrt(m) * bracket


@lru_cache(maxsize=None)
def _upper_indices(d: int):
    return np.triu_indices(d)


def symmetric_noise(rng: np.random.Generator, d: int, sigma: float, regime: str) -> np.ndarray:
    if regime == "zcdp":
        iu, ju = _upper_indices(d)
        out = np.empty((d, d))
        vals = rng.normal(0.0, sigma, size=iu.size)
        out[iu, ju] = vals
        out[ju, iu] = vals
        return out
    if regime == "epsdelta":
        g = rng.normal(0.0, sigma, size=(d, d))
        return (g + g.T) / math.sqrt(2.0)
    raise ValueError(f"unknown regime {regime!r}")


@dataclass(frozen=True)
class GramRelease:
    V_raw: np.ndarray
    lambda_shift: float
    V: np.ndarray
    chol: np.ndarray  # lower Cholesky factor of V
    noise_terms: int
    reshifted: bool = False

    @property
    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))


class AggregationTree:
    """Binary-counter aggregation of per-round Gram matrices.

    ``sigma == 0`` gives exact (noise-free) prefix sums.
    """

    def __init__(
        self, d: int, T: int, sigma: float, rng: Optional[np.random.Generator] = None,
        regime: str = "zcdp", track_touches: bool = False,
    ):
        if sigma < 0:
            raise ValueError("sigma must be non-negative")
        if sigma > 0 and rng is None:
            raise ValueError("an rng is required when sigma > 0")
        if regime not in ("zcdp", "epsdelta"):
            raise ValueError(f"unknown regime {regime!r}")
        self.d = d
        self.T = T
        self.m = tree_depth(T)
        self.sigma = float(sigma)
        self.regime = regime
        self.rng = rng
        self.t = 0
        self.p_sums = np.zeros((self.m, d, d))
        self.noisy_p_sums = np.zeros((self.m, d, d))
        self.reshift_count = 0
        self.noise_draws = 0
        self._members: Optional[List[list]] = [[] for _ in range(self.m)] if track_touches else None
        self.touches: Optional[list] = [] if track_touches else None

    def live_levels(self) -> List[int]:
        return [l for l in range(self.m) if (self.t >> l) & 1]

    def update(self, round_gram) -> None:
        if self.t >= self.T:
            raise RuntimeError(f"aggregation tree exhausted at t = T = {self.T}")
        self.t += 1
        t = self.t
        ln = (t & -t).bit_length() - 1
        node = np.asarray(round_gram, dtype=float).copy()
        for l in range(ln):
            node += self.p_sums[l]
        self.p_sums[:ln] = 0.0
        self.noisy_p_sums[:ln] = 0.0
        self.p_sums[ln] = node
        if self.sigma > 0:
            noise = symmetric_noise(self.rng, self.d, self.sigma, self.regime)
            self.noise_draws += 1
            self.noisy_p_sums[ln] = node + noise
        else:
            self.noisy_p_sums[ln] = node
        if self._members is not None:
            members = [e for l in range(ln) for e in self._members[l]] + [t - 1]
            for l in range(ln):
                self._members[l] = []
            self._members[ln] = members
            self.touches.append(0)
            for e in members:
                self.touches[e] += 1

    def raw_release(self) -> np.ndarray:
        if self.t < 1:
            raise RuntimeError("nothing to release before the first update")
        live = [l for l in range(self.m) if (self.t >> l) & 1]
        return self.noisy_p_sums[live].sum(axis=0)

    def release(self, lam: float) -> GramRelease:
        V_raw = self.raw_release()
        V = V_raw.copy()
        V.flat[:: self.d + 1] += 2.0 * lam
        reshifted = False
        try:
            chol = np.linalg.cholesky(V)
        except np.linalg.LinAlgError:
            lam_min = float(np.linalg.eigvalsh(V)[0])
            V = V + (abs(lam_min) + 1e-6) * np.eye(self.d)
            chol = np.linalg.cholesky(V)
            self.reshift_count += 1
            reshifted = True
        n_noise = bin(self.t).count("1") if self.sigma > 0 else 0
        return GramRelease(V_raw, lam, V, chol, n_noise, reshifted)
