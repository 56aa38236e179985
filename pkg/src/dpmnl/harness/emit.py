"""CSV emission of raw regret, summaries, privacy ledgers and the config snapshot."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..accountant import LEDGER_COLUMNS
from .config import ExperimentConfig
from .runner import ResultsTable, env_seed, policy_seed, summarize


def fmt(x: float) -> str:
    return f"{x:.17g}"


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def check_prefix_sums(table: ResultsTable) -> None:
    for r in table.results:
        if r.error is not None:
            continue
        cum = r.cum_regret
        if not np.array_equal(cum, np.cumsum(r.instant_regret)) or cum.shape != r.instant_regret.shape:
            raise AssertionError(f"cum_regret is not the prefix sum for {r.arm}/{r.replicate}")


def raw_csv(table: ResultsTable) -> str:
    lines = ["arm,replicate,t,instant_regret,cum_regret"]
    for r in table.results:
        if r.error is not None:
            continue
        cum = r.cum_regret
        prefix = f"{r.arm},{r.replicate},"
        lines.extend(
            f"{prefix}{t},{fmt(x)},{fmt(c)}"
            for t, (x, c) in enumerate(zip(r.instant_regret.tolist(), cum.tolist()), 1)
        )
    return "\n".join(lines) + "\n"


def summary_csv(table: ResultsTable) -> str:
    lines = ["arm,t,mean,lo,hi"]
    for arm, (mean, lo, hi) in summarize(table).items():
        lines.extend(
            f"{arm},{t},{fmt(m)},{fmt(a)},{fmt(b)}"
            for t, (m, a, b) in enumerate(zip(mean.tolist(), lo.tolist(), hi.tolist()), 1)
        )
    return "\n".join(lines) + "\n"


def ledger_csv(table: ResultsTable) -> str:
    lines = ["arm,replicate," + ",".join(LEDGER_COLUMNS)]
    for r in table.results:
        if r.error is not None:
            continue
        for ev, mech, amt, dl, cum in r.ledger.rows():
            lines.append(f"{r.arm},{r.replicate},{ev},{mech},{fmt(amt)},{fmt(dl)},{fmt(cum)}")
    return "\n".join(lines) + "\n"


def snapshot_text(exp: ExperimentConfig) -> str:
    """Resolved config; derived stream seeds follow as comments."""
    lines = [exp.snapshot_text().rstrip("\n")]
    lines.append("# derived streams: entropy = master_seed, spawn_key shown")
    for rep in range(exp.replicates):
        keys = [env_seed(exp.master_seed, rep, s).spawn_key for s in range(3)]
        lines.append(f"# replicate {rep} environment {keys}")
        for a, arm in enumerate(exp.arms):
            keys = [policy_seed(exp.master_seed, a, rep, s).spawn_key for s in range(3)]
            lines.append(f"# replicate {rep} arm {arm.label} policy {keys}")
    return "\n".join(lines) + "\n"


def summarize_and_emit(table: ResultsTable, exp: ExperimentConfig, output_dir) -> Path:
    if not any(r.error is None for r in table.results):
        raise ValueError("no successful replicate to emit")
    check_prefix_sums(table)
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc.strerror}") from exc
    _write(out / "raw.csv", raw_csv(table))
    _write(out / "summary.csv", summary_csv(table))
    _write(out / "ledger.csv", ledger_csv(table))
    _write(out / "config.snapshot", snapshot_text(exp))
    if table.audit:
        _write(out / "audit.log", "\n".join(table.audit) + "\n")
    return out
