"""Flat ``key = value`` experiment configuration and arm expansion.

Recognized keys (defaults in ``DEFAULTS``)::

    T, T0, N, K, d               horizon, exploration rounds, catalog, assortment, dimension
    rho_total, mle_fraction      zCDP budget and the share given to the private MLE
    regime                       zcdp | epsdelta
    epsilon_total, delta_total   (epsilon, delta) budget; when unset it is matched to
                                 rho_total with delta = 1/T^2
    conversion                   standard (eps = rho + 2 sqrt(rho ln 1/delta)) | linear
    D_MLE_cap, c_scale, kappa, q, lambda_override, noise_off, policy
    replicates, master_seed, output_dir
    context_mode                 raw | normalized
    revenue_mode                 uniform | vector
    theta_star_mode, theta_star  uniform01 | fixed (comma-separated vector)
    replay_path                  replay CSV (t,item_id,f1..fd,revenue[,chosen])
    sweep_rho_total, sweep_mle_fraction, sweep_regime, sweep_K, sweep_policy
                                 comma-separated lists, expanded as a cartesian grid
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from ..accountant import zcdp_to_eps_delta, zcdp_to_eps_delta_linear
from ..policy import PolicyConfig


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


DEFAULTS: Dict[str, str] = {
    "T": "20000",
    "T0": "1000",
    "N": "100",
    "K": "10",
    "d": "5",
    "rho_total": "1.0",
    "mle_fraction": "0.9",
    "regime": "zcdp",
    "epsilon_total": "",
    "delta_total": "",
    "conversion": "standard",
    "D_MLE_cap": "20",
    "c_scale": "1e-4",
    "kappa": "1.0",
    "q": "0.5",
    "lambda_override": "",
    "noise_off": "false",
    "policy": "dpmnl",
    "replicates": "20",
    "master_seed": "20240901",
    "output_dir": "results",
    "context_mode": "raw",
    "revenue_mode": "uniform",
    "theta_star_mode": "uniform01",
    "theta_star": "",
    "replay_path": "",
    "sweep_rho_total": "",
    "sweep_mle_fraction": "",
    "sweep_regime": "",
    "sweep_K": "",
    "sweep_policy": "",
}

SWEEP_KEYS = {
    "sweep_rho_total": "rho_total",
    "sweep_mle_fraction": "mle_fraction",
    "sweep_regime": "regime",
    "sweep_K": "K",
    "sweep_policy": "policy",
}

POLICIES = ("dpmnl", "oracle", "random")


def _bool(key, v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(key, f"expected a boolean, got {v!r}")


def _num(key, v: str, kind=float):
    try:
        return kind(v)
    except ValueError:
        raise ConfigError(key, f"expected {kind.__name__}, got {v!r}") from None


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("<syntax>", f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(key, f"unknown configuration key ({source}:{lineno})")
        values[key] = value
    return values


def load_config_file(path) -> Dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError("config", f"file not found: {p}")
    return parse_config_text(p.read_text(), str(p))


def apply_overrides(values: Dict[str, str], overrides: List[str]) -> Dict[str, str]:
    out = dict(values)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        k, v = (s.strip() for s in item.split("=", 1))
        if k not in DEFAULTS:
            raise ConfigError(k, "unknown configuration key")
        out[k] = v
    return out


@dataclass(frozen=True)
class EnvSpec:
    N: int
    d: int
    K: int
    T: int
    context_mode: str = "raw"
    revenue_mode: str = "uniform"
    theta_star_mode: str = "uniform01"
    theta_star: Optional[Tuple[float, ...]] = None
    replay_path: Optional[str] = None

    def __post_init__(self):
        if self.context_mode not in ("raw", "normalized"):
            raise ConfigError("context_mode", f"unknown mode {self.context_mode!r}")
        if self.revenue_mode not in ("uniform", "vector"):
            raise ConfigError("revenue_mode", f"unknown mode {self.revenue_mode!r}")
        if self.theta_star_mode not in ("uniform01", "fixed"):
            raise ConfigError("theta_star_mode", f"unknown mode {self.theta_star_mode!r}")
        if self.theta_star_mode == "fixed":
            if self.theta_star is None or len(self.theta_star) != self.d:
                raise ConfigError("theta_star", f"fixed mode needs a vector of length d={self.d}")
        if min(self.N, self.d, self.K, self.T) < 1:
            raise ConfigError("N", "N, d, K and T must be positive")
        if self.replay_path is None and self.K > self.N:
            raise ConfigError("K", f"K={self.K} exceeds N={self.N}")


@dataclass(frozen=True)
class ArmSpec:
    label: str
    policy_kind: str
    policy: Optional[PolicyConfig]
    K: int
    settings: Tuple[Tuple[str, str], ...] = ()


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvSpec
    arms: Tuple[ArmSpec, ...]
    replicates: int
    master_seed: int
    output_dir: str
    values: Tuple[Tuple[str, str], ...] = field(default=())

    def snapshot_text(self) -> str:
        lines = [f"{k} = {v}" for k, v in self.values]
        return "\n".join(lines) + "\n"


def _split_list(key, s: str) -> List[str]:
    items = [x.strip() for x in s.split(",") if x.strip()]
    if not items:
        raise ConfigError(key, "empty list")
    return items


def build_policy_config(v: Dict[str, str]) -> Tuple[str, Optional[PolicyConfig], int]:
    """Resolve one arm's policy from a flat value map."""
    kind = v["policy"].strip().lower()
    if kind not in POLICIES:
        raise ConfigError("policy", f"unknown policy {kind!r}; choose from {POLICIES}")
    T = _num("T", v["T"], int)
    T0 = _num("T0", v["T0"], int)
    K = _num("K", v["K"], int)
    d = _num("d", v["d"], int)
    if not 1 <= T0 < T:
        raise ConfigError("T0", f"T0={T0} must satisfy 1 <= T0 < T={T}")
    if kind != "dpmnl":
        return kind, None, K
    regime = v["regime"].strip().lower()
    if regime not in ("zcdp", "epsdelta"):
        raise ConfigError("regime", f"unknown regime {regime!r}")
    rho_total = _num("rho_total", v["rho_total"])
    frac = _num("mle_fraction", v["mle_fraction"])
    if not 0 < frac < 1:
        raise ConfigError("mle_fraction", "must lie in (0, 1)")
    noise_off = _bool("noise_off", v["noise_off"])
    if not noise_off and not rho_total > 0 and not v["epsilon_total"]:
        raise ConfigError("rho_total", "must be positive")
    lam = v["lambda_override"].strip()
    common = dict(
        T=T, T0=T0, K=K, d=d,
        D_MLE_cap=_num("D_MLE_cap", v["D_MLE_cap"], int),
        kappa=_num("kappa", v["kappa"]),
        q=_num("q", v["q"]),
        c_scale=_num("c_scale", v["c_scale"]),
        noise_off=noise_off,
        lambda_override=_num("lambda_override", lam) if lam else None,
        regime=regime,
    )
    if common["D_MLE_cap"] < 1:
        raise ConfigError("D_MLE_cap", "must be at least 1")
    if not 0 < common["q"] < 1:
        raise ConfigError("q", "must lie in (0, 1)")
    if regime == "zcdp" or noise_off:
        rho_total = rho_total if rho_total > 0 else 1.0
        return kind, PolicyConfig(rho1=rho_total * frac, rho2=rho_total * (1 - frac), **common), K
    if v["epsilon_total"]:
        eps = _num("epsilon_total", v["epsilon_total"])
        delta = _num("delta_total", v["delta_total"]) if v["delta_total"] else 1.0 / T**2
    else:
        conv = v["conversion"].strip().lower()
        if conv == "standard":
            delta = _num("delta_total", v["delta_total"]) if v["delta_total"] else 1.0 / T**2
            eps = zcdp_to_eps_delta(rho_total, delta).epsilon
        elif conv == "linear":
            b = zcdp_to_eps_delta_linear(rho_total, T)
            eps, delta = b.epsilon, b.delta
        else:
            raise ConfigError("conversion", f"unknown conversion {conv!r}")
    if not eps > 0 or not 0 < delta < 1:
        raise ConfigError("epsilon_total", f"invalid budget ({eps}, {delta})")
    return kind, PolicyConfig(
        eps1=eps * frac, eps2=eps * (1 - frac), delta1=delta / 2, delta2=delta / 2, **common
    ), K


def _arm_label(settings: Dict[str, str]) -> str:
    if not settings:
        return "base"
    return ";".join(f"{k}={v}" for k, v in settings.items())


def resolve(values: Dict[str, str], sweep: bool = False) -> ExperimentConfig:
    v = dict(DEFAULTS)
    v.update(values)
    T = _num("T", v["T"], int)
    N = _num("N", v["N"], int)
    d = _num("d", v["d"], int)
    replicates = _num("replicates", v["replicates"], int)
    if replicates < 1:
        raise ConfigError("replicates", "must be at least 1")
    seed = _num("master_seed", v["master_seed"], int)
    if not 0 <= seed < 2**64:
        raise ConfigError("master_seed", "must be a 64-bit unsigned integer")
    theta = None
    if v["theta_star"].strip():
        theta = tuple(_num("theta_star", x) for x in _split_list("theta_star", v["theta_star"]))

    grid: List[Dict[str, str]] = [{}]
    if sweep:
        axes = [(SWEEP_KEYS[k], _split_list(k, v[k])) for k in SWEEP_KEYS if v[k].strip()]
        if not axes:
            raise ConfigError("sweep_rho_total", "sweep needs at least one sweep_* list")
        grid = [dict(zip([a for a, _ in axes], combo))
                for combo in itertools.product(*[vals for _, vals in axes])]

    arms = []
    K_max = 0
    for settings in grid:
        arm_values = dict(v)
        arm_values.update(settings)
        kind, pcfg, K = build_policy_config(arm_values)
        K_max = max(K_max, K)
        arms.append(ArmSpec(_arm_label(settings), kind, pcfg, K, tuple(settings.items())))
    labels = [a.label for a in arms]
    if len(set(labels)) != len(labels):
        raise ConfigError("sweep_rho_total", "duplicate sweep values produce identical arms")

    env = EnvSpec(
        N=N, d=d, K=K_max, T=T,
        context_mode=v["context_mode"].strip(),
        revenue_mode=v["revenue_mode"].strip(),
        theta_star_mode=v["theta_star_mode"].strip(),
        theta_star=theta,
        replay_path=v["replay_path"].strip() or None,
    )
    if env.replay_path is not None and not Path(env.replay_path).is_file():
        raise ConfigError("replay_path", f"file not found: {env.replay_path}")
    return ExperimentConfig(
        env=env, arms=tuple(arms), replicates=replicates, master_seed=seed,
        output_dir=v["output_dir"], values=tuple(sorted(v.items())),
    )
