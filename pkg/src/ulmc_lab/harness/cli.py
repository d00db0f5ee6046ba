"""Command line entry point: ``ulmc-lab run <config-path> [--seed S] [--out DIR] [--threads T]``.

Exit codes: 0 when every check passes, 2 when a check fails, 1 on any error
(invalid config, incompatible mode and target, numerical failure).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path
from typing import Optional, Sequence

from .. import __version__
from .acceptance import CRITERIA, EXCLUDED
from .config import ConfigError, load_config
from .runner import EXIT_ERROR, run

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ulmc-lab", description="Run ULMC experiments from a JSON config.")
    parser.add_argument("--version", action="version", version=f"ulmc-lab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("config", type=Path, help="path to a JSON config file")
    r.add_argument("--seed", type=int, default=None, help="override the config seed")
    r.add_argument("--out", type=Path, default=None, help="output directory (overrides output.dir)")
    r.add_argument("--threads", type=int, default=None, help="worker threads; results do not depend on it")
    sub.add_parser("presets", help="list the acceptance presets")
    return parser


def _run(args) -> int:
    try:
        cfg = load_config(args.config)
    except FileNotFoundError:
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return EXIT_ERROR
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    changes = {}
    if args.seed is not None:
        if args.seed < 0:
            print("error: --seed must be nonnegative", file=sys.stderr)
            return EXIT_ERROR
        changes["seed"] = args.seed
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be at least 1", file=sys.stderr)
            return EXIT_ERROR
        changes["threads"] = args.threads
    if args.out is not None:
        changes["output"] = {**cfg.output, "dir": str(args.out)}
    cfg = dataclasses.replace(cfg, **changes)
    try:
        rep = run(cfg)
    except Exception as exc:  # every failure mode maps to exit code 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for chk in rep.report["checks"]:
        status = "PASS" if chk["passed"] else "FAIL"
        print(f"[{status}] {chk['name']}: {chk['value']} (required {chk['tolerance']})")
    print(f"{'PASS' if rep.passed else 'FAIL'}: report written to {rep.out_dir / 'report.json'}")
    return rep.exit_code


def _presets() -> int:
    for cid, fn in CRITERIA.items():
        doc = (fn.__doc__ or fn.__name__).strip().splitlines()[0]
        print(f"acceptance/{cid}\t{doc}")
    for cid, why in EXCLUDED.items():
        print(f"acceptance/{cid}\texcluded: {why}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return _run(args)
    return _presets()


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
