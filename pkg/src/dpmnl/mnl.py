"""Multinomial-logit choice model and assortment optimization.

Probabilities are laid out over ``S ∪ {0}`` with the no-purchase option
at position 0, followed by the offered items in assortment order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb
from typing import Optional, Sequence

import numpy as np

DEFAULT_SUBSET_CAP = 200_000

Assortment = tuple  # sorted tuple of distinct catalog indices


class UnsupportedInstanceError(ValueError):
    """Assortment problem too large for brute force with no fast path."""


@dataclass(frozen=True)
class RoundContext:
    """One user arrival: item features (N, d) and per-item revenues (N,)."""

    items: np.ndarray
    revenues: np.ndarray
    round_index: int = 0

    def __post_init__(self):
        items = np.asarray(self.items, dtype=float)
        revenues = np.asarray(self.revenues, dtype=float)
        if items.ndim != 2:
            raise ValueError(f"items must be 2-D (N, d), got shape {items.shape}")
        if revenues.shape != (items.shape[0],):
            raise ValueError(
                f"revenues shape {revenues.shape} does not match N={items.shape[0]}"
            )
        if not np.all(np.isfinite(items)):
            raise ValueError("item features must be finite")
        if np.any(np.abs(revenues) > 1.0):
            raise ValueError("revenues must satisfy |r| <= 1")
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "revenues", revenues)

    @classmethod
    def trusted(cls, items: np.ndarray, revenues: np.ndarray, round_index: int = 0) -> "RoundContext":
        """Skip validation for arrays the caller already guarantees are well formed."""
        ctx = object.__new__(cls)
        object.__setattr__(ctx, "items", items)
        object.__setattr__(ctx, "revenues", revenues)
        object.__setattr__(ctx, "round_index", round_index)
        return ctx

    @property
    def n_items(self) -> int:
        return self.items.shape[0]

    @property
    def dim(self) -> int:
        return self.items.shape[1]


@dataclass(frozen=True)
class ChoiceOutcome:
    """Sampled choice. ``position`` 0 is no-purchase, k >= 1 the k-th offered item."""

    position: int
    one_hot: np.ndarray = field(repr=False)
    item: Optional[int] = None

    @property
    def purchased(self) -> bool:
        return self.position != 0


def make_assortment(indices: Sequence[int], n_items: Optional[int] = None) -> Assortment:
    idx = tuple(sorted(int(i) for i in indices))
    if len(idx) == 0:
        raise ValueError("assortment must be non-empty")
    if len(set(idx)) != len(idx):
        raise ValueError(f"assortment indices must be distinct: {idx}")
    if n_items is not None and (idx[0] < 0 or idx[-1] >= n_items):
        raise IndexError(f"assortment {idx} out of range for N={n_items}")
    return idx


def probabilities_from_utilities(u: np.ndarray) -> np.ndarray:
    """MNL probabilities over ``{0} ∪ S`` for utilities ``u`` of the offered items."""
    u = np.asarray(u, dtype=float)
    shift = max(0.0, float(u.max())) if u.size else 0.0
    w = np.exp(u - shift)
    w0 = np.exp(-shift)
    denom = w0 + w.sum()
    out = np.empty(u.size + 1)
    out[0] = w0 / denom
    out[1:] = w / denom
    return out


def _check(ctx: RoundContext, S: Sequence[int], theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (ctx.dim,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({ctx.dim},)")
    idx = np.asarray(S, dtype=int)
    if idx.size == 0:
        raise ValueError("assortment must be non-empty")
    if idx.min() < 0 or idx.max() >= ctx.n_items:
        raise IndexError(f"assortment {tuple(S)} out of range for N={ctx.n_items}")
    return idx


def choice_probabilities(ctx: RoundContext, S: Sequence[int], theta) -> np.ndarray:
    """Vector ``(p(0|S), p(i_1|S), ..., p(i_k|S))`` under parameter ``theta``."""
    idx = _check(ctx, S, theta)
    return probabilities_from_utilities(ctx.items[idx] @ np.asarray(theta, dtype=float))


def sample_choice(
    probs, rng: np.random.Generator, assortment: Optional[Sequence[int]] = None
) -> ChoiceOutcome:
    """Draw one category from ``probs`` using a single uniform from ``rng``."""
    p = np.asarray(probs, dtype=float)
    cdf = np.cumsum(p)
    if p.ndim != 1 or p.size == 0 or p.min() < 0 or abs(cdf[-1] - 1.0) > 1e-12:
        raise ValueError("probabilities must be non-negative and sum to 1")
    pos = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    pos = min(pos, p.size - 1)
    # never land on a zero-probability category through float round-off
    while p[pos] == 0.0:
        pos -= 1
    one_hot = np.zeros(p.size)
    one_hot[pos] = 1.0
    item = None
    if assortment is not None and pos > 0:
        item = int(assortment[pos - 1])
    return ChoiceOutcome(position=pos, one_hot=one_hot, item=item)


def expected_revenue(ctx: RoundContext, S: Sequence[int], theta) -> float:
    idx = _check(ctx, S, theta)
    p = probabilities_from_utilities(ctx.items[idx] @ np.asarray(theta, dtype=float))
    return float(ctx.revenues[idx] @ p[1:])


def optimistic_revenue(z, r) -> float:
    """``sum r_i e^{z_i} / (1 + sum e^{z_j})`` evaluated without overflow."""
    z = np.asarray(z, dtype=float)
    r = np.asarray(r, dtype=float)
    if z.shape != r.shape:
        raise ValueError("z and r must have the same shape")
    if np.any(np.isnan(z)) or np.any(np.isnan(r)):
        raise ValueError("NaN in optimistic revenue inputs")
    p = probabilities_from_utilities(z)
    return float(r @ p[1:])


def top_k(z: np.ndarray, K: int) -> Assortment:
    """Indices of the K largest entries, lowest index first on ties, sorted."""
    order = np.argsort(-np.asarray(z, dtype=float), kind="stable")[:K]
    return tuple(sorted(order.tolist()))


def brute_force_assortment(
    z: np.ndarray, revenues: np.ndarray, K: int, cap: int = DEFAULT_SUBSET_CAP
) -> Assortment:
    """Exhaustive argmax of optimistic revenue over all non-empty subsets of size <= K."""
    z = np.asarray(z, dtype=float)
    r = np.asarray(revenues, dtype=float)
    n = z.size
    total = sum(comb(n, k) for k in range(1, K + 1))
    if total > cap:
        raise UnsupportedInstanceError(
            f"{total} candidate subsets exceed the brute-force cap {cap}"
        )
    shift = max(0.0, float(z.max()))
    w = np.exp(z - shift)
    w0 = np.exp(-shift)
    best_val = -np.inf
    best_set: Optional[tuple] = None
    for k in range(1, K + 1):
        sets = np.array(list(combinations(range(n), k)), dtype=int)
        ws = w[sets]
        vals = (ws * r[sets]).sum(axis=1) / (w0 + ws.sum(axis=1))
        i = int(np.argmax(vals))
        v = float(vals[i])
        cand = tuple(int(j) for j in sets[i])
        if v > best_val or (v == best_val and cand < best_set):
            best_val, best_set = v, cand
    return best_set


def best_assortment(
    z, revenues, K: int, mode: str = "auto", cap: int = DEFAULT_SUBSET_CAP
) -> Assortment:
    """Maximize optimistic revenue over subsets of size at most K.

    ``mode`` is ``"auto"``, ``"topk"`` (requires equal positive revenues) or
    ``"brute"``.
    """
    z = np.asarray(z, dtype=float)
    r = np.asarray(revenues, dtype=float)
    if z.ndim != 1 or r.shape != z.shape:
        raise ValueError("z and revenues must be 1-D of equal length")
    if not 1 <= K <= z.size:
        raise ValueError(f"K={K} must satisfy 1 <= K <= N={z.size}")
    uniform = bool(r[0] > 0 and r.min() == r.max())
    if mode == "topk" or (mode == "auto" and uniform):
        if not uniform:
            raise UnsupportedInstanceError("top-K fast path needs equal positive revenues")
        return top_k(z, K)
    if mode not in ("auto", "brute"):
        raise ValueError(f"unknown mode {mode!r}")
    return brute_force_assortment(z, r, K, cap)
