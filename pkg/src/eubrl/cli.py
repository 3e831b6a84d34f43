"""Command line entry point: ``eubrl run|sweep|theory|report``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import theory
from .config import load_config, parse_seeds
from .harness import SUMMARY_FIELDS, report, run_experiment, sweep


def _print_summaries(summaries) -> None:
    for s in summaries:
        parts = [f"{f}={getattr(s, f)}" for f in SUMMARY_FIELDS]
        print(" ".join(parts))


def cmd_run(args) -> int:
    config = load_config(args.config)
    if args.seeds:
        config = config.model_copy(update={"seeds": args.seeds})
    out = args.out or Path("results") / config.name
    result = run_experiment(config, workers=args.workers, out=out)
    _print_summaries(result.summaries)
    print(f"results written to {out}")
    return 0 if all(s.complete for s in result.summaries) else 1


def cmd_sweep(args) -> int:
    config = load_config(args.config)
    grid = json.loads(Path(args.grid).read_text(encoding="utf-8"))
    seeds = parse_seeds(args.seeds) if args.seeds else None
    out = args.out or Path("results") / f"{config.name}-sweep"
    result = sweep(config, grid, seeds=seeds, workers=args.workers, out=out)
    for overrides, summaries in result.table:
        print(json.dumps(overrides, sort_keys=True))
        _print_summaries(summaries)
    print("best:", json.dumps(result.best_overrides, sort_keys=True))
    print(f"sweep table and best config written to {out}")
    return 0


def cmd_theory(args) -> int:
    names = list(theory.CHECKS) if args.check == "all" else [args.check]
    reports = [theory.CHECKS[name]() for name in names]
    for rep in reports:
        text = rep.to_json()
        print(text)
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            (out / f"{rep.name}.json").write_text(text + "\n", encoding="utf-8")
    return 0 if all(r.passed for r in reports) else 1


def cmd_report(args) -> int:
    _print_summaries(report(args.in_dir))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eubrl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run every seed of one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", help="half-open range a..b (overrides the config)")
    p.add_argument("--out", help="results directory (default results/<name>)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="grid search over dotted config keys")
    p.add_argument("--config", required=True)
    p.add_argument("--grid", required=True, help='JSON object such as {"agent.eta": [1, 5]}')
    p.add_argument("--seeds", help="seed range used for every grid point")
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("theory", help="run a numerical check")
    p.add_argument("--check", required=True, choices=[*theory.CHECKS, "all"])
    p.add_argument("--out", help="directory for JSON reports")
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("report", help="rebuild summary CSVs from a results directory")
    p.add_argument("--in", dest="in_dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
