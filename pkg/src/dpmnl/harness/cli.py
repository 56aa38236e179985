"""Command-line entry point: ``dpmnl run|sweep|validate|fit-ground-truth``."""
from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

from .config import ConfigError, apply_overrides, load_config_file, resolve
from .emit import fmt, summarize_and_emit
from .env import ReplayFormatError, fit_ground_truth


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpmnl", description="Private MNL bandit simulations")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("run", "run one arm over all replicates"),
        ("sweep", "run the cartesian grid of sweep_* lists"),
        ("validate", "check a config file without running"),
    ):
        s = sub.add_parser(name, help=help_)
        s.add_argument("config")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        if name != "validate":
            s.add_argument("--output-dir", help="shorthand for --set output_dir=...")
            s.add_argument("--workers", type=int,
                           help="worker processes (default: DPMNL_THREADS, 0 = auto)")
    f = sub.add_parser("fit-ground-truth", help="non-private MLE on a replay CSV")
    f.add_argument("csv")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _load(args):
    values = load_config_file(args.config)
    overrides = list(args.set)
    if getattr(args, "output_dir", None):
        overrides.append(f"output_dir={args.output_dir}")
    return apply_overrides(values, overrides)


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "fit-ground-truth":
            theta = fit_ground_truth(args.csv)
            print(",".join(fmt(x) for x in theta))
            return 0
        values = _load(args)
        exp = resolve(values, sweep=args.command == "sweep")
        if args.command == "validate":
            print(f"ok: {len(exp.arms)} arm(s), {exp.replicates} replicate(s), T={exp.env.T}")
            return 0
        from .runner import run

        table = run(exp, workers=args.workers)
        out = summarize_and_emit(table, exp, exp.output_dir)
        for line in table.audit:
            print(f"audit: {line}", file=sys.stderr)
        print(f"wrote {out}")
        return 0
    except (ConfigError, ReplayFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
