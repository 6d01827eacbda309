"""Command line entry points.

Verbs:
  simulate    phantom -> mesh -> CEM voltages -> DN matrices
  reconstruct DN matrices -> traces -> scattering -> D-bar -> image
  pipeline    both of the above
  compare     per-artifact differences between two run directories

Exit codes: 0 success, 1 stage failure (stage named on stderr), 2 bad usage
or configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .config import RunConfig, apply_overrides, load_config, save_config
from .pipeline import StageError, compare_runs, run_pipeline, run_reconstruct, run_simulate

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dbar-eit",
                                description="D-bar admittivity reconstruction")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in ("simulate", "reconstruct", "pipeline"):
        q = sub.add_parser(verb)
        q.add_argument("--config", help="INI run configuration")
        q.add_argument("--out", required=True, help="artifact directory")
        q.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
    q = sub.add_parser("compare")
    q.add_argument("dir_a")
    q.add_argument("dir_b")
    return p


def _config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return apply_overrides(cfg, args.set)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.verb == "compare":
        try:
            report = compare_runs(args.dir_a, args.dir_b)
        except (OSError, ValueError) as e:
            print(f"compare failed: {e}", file=sys.stderr)
            return 1
        json.dump(report, sys.stdout, indent=2, sort_keys=True)
        print()
        return 0

    try:
        cfg = _config_from_args(args)
    except (OSError, ValueError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict = {}
    try:
        if args.verb == "simulate":
            save_config(cfg, out / "config.ini")
            run_simulate(cfg, out, timings)
            _dump_timings(timings, out)
        elif args.verb == "reconstruct":
            run_reconstruct(cfg, out, timings)
            _dump_timings(timings, out)
        else:
            run_pipeline(cfg, out)
    except StageError as e:
        print(f"pipeline failed in stage {e.stage!r}: {e.cause}", file=sys.stderr)
        return 1
    print(f"{args.verb} finished; artifacts in {out}")
    return 0


def _dump_timings(timings: dict, out: Path) -> None:
    with open(out / "timings.json", "w") as f:
        json.dump({k: round(v, 3) for k, v in timings.items()}, f,
                  indent=2, sort_keys=True)
        f.write("\n")


if __name__ == "__main__":
    sys.exit(main())
