"""Command line: ``leafwise run|validate|list-experiments``."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import EXPERIMENTS, load_config
from .errors import ConfigError, LeafwiseError


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="leafwise", description="Leafwise Brownian motion experiments.")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in ("run", "validate"):
        s = sub.add_parser(verb)
        s.add_argument("experiment", nargs="?", help="E1..E8 or custom (overrides the config name)")
        s.add_argument("--config", metavar="PATH")
        s.add_argument("--seed", type=int)
        s.add_argument("--workers", type=int)
        s.add_argument("--out", metavar="DIR")
        if verb == "run":
            s.add_argument("--overwrite", action="store_true")
    sub.add_parser("list-experiments")
    return p


def _config(args):
    overrides = {"seed": args.seed, "workers": args.workers, "output_dir": args.out}
    return load_config(args.config, args.experiment, overrides)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.verb == "list-experiments":
        for name, text in EXPERIMENTS.items():
            print(f"{name}\t{text}")
        return 0
    try:
        cfg = _config(args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2
    if args.verb == "validate":
        print(json.dumps(cfg.to_dict(), indent=2))
        return 0
    from .experiments import run_experiment
    from .report import emit_report

    out = cfg.output_dir if args.out else os.path.join(cfg.output_dir, cfg.experiment)
    report_path = os.path.join(out, "report.json")
    if os.path.exists(report_path) and not args.overwrite:
        print(f"{report_path}: already exists; pass --overwrite to replace it", file=sys.stderr)
        return 3
    try:
        report = run_experiment(cfg)
        emit_report(report, out, overwrite=args.overwrite)
    except LeafwiseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for c in report.checks:
        status = "report" if c.flag == "report" else ("PASS" if c.passed else "FAIL")
        print(f"{status:6s} {c.name} = {c.value} ({c.tolerance})")
    print(f"wall time {report.wall_time:.1f} s; artifacts in {out}")
    return 0 if report.all_passed else 4


if __name__ == "__main__":
    sys.exit(main())
