"""Synthetic and replayed environments yielding one ``RoundContext`` per round."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterator, List, Optional

import numpy as np

from ..mnl import RoundContext
from ..private_mle import InteractionLog, PerturbationParams, solve_perturbed_mle
from .config import EnvSpec

CHUNK = 512
FIT_RIDGE = 1e-6


class ReplayFormatError(ValueError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.lineno = lineno


@dataclass
class ReplayData:
    """Rounds of a replay file: per-round features, revenues and optional choices."""

    features: List[np.ndarray]
    revenues: List[np.ndarray]
    chosen: Optional[List[int]]  # position (0 = none, k = k-th row of the round)
    d: int


def read_replay(path) -> ReplayData:
    """Parse ``t,item_id,f1..fd,revenue[,chosen]`` rows grouped by ``t``."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ReplayFormatError(path, 0, f"cannot open: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ReplayFormatError(path, 1, "empty file")
        header = [h.strip() for h in header]
        has_chosen = header[-1] == "chosen"
        feat = header[2:-2] if has_chosen else header[2:-1]
        rev_col = len(header) - (2 if has_chosen else 1)
        expect = [f"f{i + 1}" for i in range(len(feat))]
        if header[:2] != ["t", "item_id"] or feat != expect or not feat or header[rev_col] != "revenue":
            raise ReplayFormatError(path, 1, "header must be t,item_id,f1..fd,revenue[,chosen]")
        d = len(feat)
        groups: dict = {}
        order: list = []
        for lineno, row in enumerate(reader, 2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ReplayFormatError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
            try:
                t = int(row[0])
                x = [float(v) for v in row[2:2 + d]]
                r = float(row[rev_col])
                c = int(row[-1]) if has_chosen else 0
            except ValueError as exc:
                raise ReplayFormatError(path, lineno, str(exc)) from None
            if not np.all(np.isfinite(x)) or not np.isfinite(r) or abs(r) > 1:
                raise ReplayFormatError(path, lineno, "non-finite feature or |revenue| > 1")
            if c not in (0, 1):
                raise ReplayFormatError(path, lineno, "chosen must be 0 or 1")
            if t not in groups:
                groups[t] = ([], [], [], lineno)
                order.append(t)
            g = groups[t]
            g[0].append(x)
            g[1].append(r)
            g[2].append(c)
    if not order:
        raise ReplayFormatError(path, 2, "no data rows")
    feats, revs, chosen = [], [], []
    for t in order:
        xs, rs, cs, lineno = groups[t]
        if sum(cs) > 1:
            raise ReplayFormatError(path, lineno, f"round t={t} has more than one chosen item")
        feats.append(np.array(xs))
        revs.append(np.array(rs))
        chosen.append(cs.index(1) + 1 if 1 in cs else 0)
    return ReplayData(feats, revs, chosen if has_chosen else None, d)


def fit_ground_truth(path, tol: float = 1e-8) -> np.ndarray:
    """Non-private ridge MLE (ridge 1e-6, no noise) on every logged round."""
    data = read_replay(path)
    if data.chosen is None:
        raise ReplayFormatError(path, 1, "fitting needs a 'chosen' column")
    k_max = max(f.shape[0] for f in data.features)
    log = InteractionLog(data.d, k_max, capacity=len(data.features))
    for X, pos in zip(data.features, data.chosen):
        log.append(X, pos)
    params = PerturbationParams(FIT_RIDGE, 0.0)
    return solve_perturbed_mle(log, params, tol=tol, max_iter=500).theta_hat


def draw_theta_star(spec: EnvSpec, rng: np.random.Generator, d: Optional[int] = None) -> np.ndarray:
    if spec.theta_star_mode == "fixed":
        theta = np.array(spec.theta_star, dtype=float)
    else:
        theta = rng.uniform(0.0, 1.0, size=d or spec.d)
    if spec.context_mode == "normalized":
        theta = clip_to_unit_ball(theta)
    return theta


def clip_to_unit_ball(x: np.ndarray) -> np.ndarray:
    """Divide rows by max(1, norm), nudging round-off so every norm is <= 1."""
    x = x / np.maximum(1.0, np.linalg.norm(x, axis=-1, keepdims=True))
    over = np.linalg.norm(x, axis=-1) > 1.0
    while over.any():
        x[over] *= 1.0 - np.finfo(float).eps
        over = np.linalg.norm(x, axis=-1) > 1.0
    return x


class SyntheticEnvironment:
    """i.i.d. Gaussian contexts; one theta* per replicate."""

    def __init__(self, spec: EnvSpec, rng_theta, rng_context):
        self.spec = spec
        self.theta_star = draw_theta_star(spec, rng_theta)
        self.rng = rng_context
        if spec.revenue_mode == "uniform":
            self.revenues = np.ones(spec.N)
        else:
            self.revenues = rng_theta.uniform(0.0, 1.0, size=spec.N)

    def contexts(self) -> Iterator[RoundContext]:
        spec = self.spec
        t = 0
        while t < spec.T:
            n = min(CHUNK, spec.T - t)
            block = self.rng.standard_normal((n, spec.N, spec.d))
            if spec.context_mode == "normalized":
                block = clip_to_unit_ball(block)
            for i in range(n):
                t += 1
                yield RoundContext.trusted(block[i], self.revenues, t)


class ReplayEnvironment:
    """Rounds of a replay file resampled uniformly with replacement."""

    def __init__(self, spec: EnvSpec, data: ReplayData, theta_star, rng_context):
        self.spec = spec
        self.data = data
        self.theta_star = np.asarray(theta_star, dtype=float)
        self.rng = rng_context

    def contexts(self) -> Iterator[RoundContext]:
        idx = self.rng.integers(0, len(self.data.features), size=self.spec.T)
        for t, i in enumerate(idx, 1):
            yield RoundContext.trusted(self.data.features[i], self.data.revenues[i], t)


def generate_environment(spec: EnvSpec, rng_theta, rng_context, replay: Optional[ReplayData] = None,
                         fitted_theta=None):
    if spec.replay_path is None:
        return SyntheticEnvironment(spec, rng_theta, rng_context)
    if replay is None:
        replay = read_replay(spec.replay_path)
    if replay.d != spec.d:
        raise ValueError(f"replay has d={replay.d} features but the config says d={spec.d}")
    if spec.theta_star_mode == "fixed":
        theta = np.array(spec.theta_star, dtype=float)
    elif fitted_theta is not None:
        theta = fitted_theta
    elif replay.chosen is not None:
        theta = fit_ground_truth(spec.replay_path)
    else:
        theta = draw_theta_star(spec, rng_theta)
    return ReplayEnvironment(spec, replay, theta, rng_context)
