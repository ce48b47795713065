"""Command-line entry point: ``mcflab <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys

from ..errors import ValidationError
from .config import build_config, load_config, parse_overrides
from .pipeline import EXIT_ERROR, run_pipeline
from .scenarios import ASPIRATIONAL, OPERATIONS, list_scenarios

SUBCOMMANDS = OPERATIONS + ("all",)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mcflab", description="Mean curvature flow and stability certification lab.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="list scenarios")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run {name}" if name != "all" else "run every supported operation")
        p.add_argument("--config", help="INI run configuration")
        p.add_argument("--scenario", help="scenario name (overrides the config)")
        p.add_argument("--seed", type=int, help="rng seed (overrides the config)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="set a config key, e.g. epsilon1=0.5 or flow.t_end=3 (repeatable)")
    return ap


def _config(args):
    extra = list(args.override)
    if args.scenario:
        extra.append(f"run.scenario={args.scenario}")
    if args.seed is not None:
        extra.append(f"run.rng_seed={args.seed}")
    if args.out:
        extra.append(f"run.output={args.out}")
    extra.append(f"run.operation={args.command}")
    if args.config:
        return load_config(args.config, extra)
    return build_config(parse_overrides(extra))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "list":
        width = max(len(n) for n, _ in list_scenarios())
        for name, desc in list_scenarios():
            print(f"{name:<{width}}  {desc}")
        print("\ndocumented only:")
        for a in ASPIRATIONAL:
            print(f"  {a.name}: {a.description}")
        return 0
    try:
        config = _config(args)
    except ValidationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    res = run_pipeline(config)
    sys.stdout.write(res.report)
    return res.status


if __name__ == "__main__":
    sys.exit(main())
