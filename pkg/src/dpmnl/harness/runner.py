"""Replicated runs of every arm, tracking per-round regret against the oracle."""
from __future__ import annotations

import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .. import mnl
from ..accountant import PrivacyLedger
from ..policy import DPMNL
from .config import ExperimentConfig
from .env import ReplayData, fit_ground_truth, generate_environment, read_replay

log = logging.getLogger(__name__)

# stream identifiers: environment streams are shared by all arms of a replicate
ENV_THETA, ENV_CONTEXT, ENV_CHOICE = 0, 1, 2
POL_EXPLORE, POL_MLE, POL_TREE = 0, 1, 2


def env_seed(master_seed: int, replicate: int, stream: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(0, replicate, stream))


def policy_seed(master_seed: int, arm: int, replicate: int, stream: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(1, arm, replicate, stream))


def _rng(seq: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seq))


@dataclass
class ReplicateResult:
    arm: str
    replicate: int
    instant_regret: Optional[np.ndarray]
    ledger: PrivacyLedger
    mle_calls: int = 0
    mle_failures: int = 0
    reshifts: int = 0
    assortments: Optional[List[tuple]] = None
    error: Optional[str] = None

    @property
    def cum_regret(self) -> np.ndarray:
        return np.cumsum(self.instant_regret)


@dataclass
class ResultsTable:
    arms: List[str]
    results: List[ReplicateResult]
    audit: List[str] = field(default_factory=list)

    def for_arm(self, arm: str) -> List[ReplicateResult]:
        return [r for r in self.results if r.arm == arm and r.error is None]

    def final_regret(self, arm: str) -> np.ndarray:
        return np.array([r.instant_regret.sum() for r in self.for_arm(arm)])


def _revenue(u: np.ndarray, r: np.ndarray) -> float:
    p = mnl.probabilities_from_utilities(u)
    return float(r @ p[1:])


def run_replicate(
    exp: ExperimentConfig, arm_index: int, replicate: int,
    replay: Optional[ReplayData] = None, fitted_theta=None,
    record_assortments: bool = False, frozen_theta: bool = False,
) -> ReplicateResult:
    """One arm on one replicate. ``frozen_theta`` injects theta* as the MLE output (test hook)."""
    arm = exp.arms[arm_index]
    seed = exp.master_seed
    env = generate_environment(
        exp.env, _rng(env_seed(seed, replicate, ENV_THETA)),
        _rng(env_seed(seed, replicate, ENV_CONTEXT)), replay, fitted_theta,
    )
    rng_choice = _rng(env_seed(seed, replicate, ENV_CHOICE))
    rng_explore = _rng(policy_seed(seed, arm_index, replicate, POL_EXPLORE))
    theta = env.theta_star
    K = arm.K
    policy = None
    ledger = PrivacyLedger(arm.policy.regime if arm.policy else "zcdp")
    if arm.policy_kind == "dpmnl":
        policy = DPMNL(
            arm.policy, rng_explore,
            _rng(policy_seed(seed, arm_index, replicate, POL_MLE)),
            _rng(policy_seed(seed, arm_index, replicate, POL_TREE)),
            ledger=ledger, frozen_theta=theta if frozen_theta else None,
        )
    T = exp.env.T
    regret = np.empty(T)
    chosen: Optional[List[tuple]] = [] if record_assortments else None
    for t, ctx in enumerate(env.contexts()):
        u = ctx.items @ theta
        k = min(K, ctx.n_items)
        S_star = mnl.best_assortment(u, ctx.revenues, k)
        if policy is not None:
            S = policy.act(ctx)
        elif arm.policy_kind == "oracle":
            S = S_star
        else:
            S = tuple(sorted(int(i) for i in rng_explore.choice(ctx.n_items, size=k, replace=False)))
        idx = list(S)
        u_S = u[idx]
        probs = mnl.probabilities_from_utilities(u_S)
        regret[t] = _revenue(u[list(S_star)], ctx.revenues[list(S_star)]) - float(
            ctx.revenues[idx] @ probs[1:]
        )
        outcome = mnl.sample_choice(probs, rng_choice, S)
        if policy is not None:
            policy.update(ctx, S, outcome)
        if chosen is not None:
            chosen.append(S)
    res = ReplicateResult(arm.label, replicate, regret, ledger, assortments=chosen)
    if policy is not None:
        res.mle_calls = policy.state.mle_calls
        res.mle_failures = policy.state.mle_failures
        res.reshifts = policy.state.tree.reshift_count
    return res


def _safe_replicate(args) -> ReplicateResult:
    exp, arm_index, replicate, replay, fitted = args
    try:
        return run_replicate(exp, arm_index, replicate, replay, fitted)
    except Exception as exc:  # one replicate failing must not stop the others
        label = exp.arms[arm_index].label
        msg = f"arm={label} replicate={replicate}: {type(exc).__name__}: {exc}"
        log.error("replicate aborted: %s\n%s", msg, traceback.format_exc())
        return ReplicateResult(label, replicate, None, PrivacyLedger(), error=msg)


def worker_count(env_value: Optional[str] = None) -> int:
    raw = os.environ.get("DPMNL_THREADS", "0") if env_value is None else env_value
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"DPMNL_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValueError("DPMNL_THREADS must be non-negative")
    return n if n > 0 else (os.cpu_count() or 1)


def run(exp: ExperimentConfig, workers: Optional[int] = None,
        order: Optional[Sequence[Tuple[int, int]]] = None) -> ResultsTable:
    """Every arm x replicate; ``order`` permutes execution (results are order-free)."""
    replay = fitted = None
    if exp.env.replay_path is not None:
        replay = read_replay(exp.env.replay_path)
        if exp.env.theta_star_mode != "fixed" and replay.chosen is not None:
            fitted = fit_ground_truth(exp.env.replay_path)
    jobs = list(order) if order is not None else [
        (a, r) for a in range(len(exp.arms)) for r in range(exp.replicates)
    ]
    tasks = [(exp, a, r, replay, fitted) for a, r in jobs]
    n = worker_count() if workers is None else workers
    if n <= 1 or len(tasks) <= 1:
        results = [_safe_replicate(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(n, len(tasks))) as pool:
            results = list(pool.map(_safe_replicate, tasks))
    audit = [r.error for r in results if r.error is not None]
    for r in results:
        if r.error is None and r.mle_failures:
            audit.append(f"arm={r.arm} replicate={r.replicate}: {r.mle_failures} MLE solves "
                         "did not converge; previous estimate kept")
    results.sort(key=lambda r: ([a.label for a in exp.arms].index(r.arm), r.replicate))
    return ResultsTable([a.label for a in exp.arms], results, audit)


def summarize(table: ResultsTable) -> Dict[str, Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Per arm: mean cumulative regret and the mean +/- 1.96 se band."""
    out = {}
    for arm in table.arms:
        runs = table.for_arm(arm)
        if not runs:
            continue
        cum = np.array([r.cum_regret for r in runs])
        mean = cum.mean(axis=0)
        if len(runs) > 1:
            se = cum.std(axis=0, ddof=1) / np.sqrt(len(runs))
        else:
            se = np.zeros_like(mean)
        out[arm] = (mean, mean - 1.96 * se, mean + 1.96 * se)
    return out
