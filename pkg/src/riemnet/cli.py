"""Command-line entry point.

    riemnet train --config run.cfg [--seed N] [--out DIR]
    riemnet check --suite {gradcheck,retraction,rayleigh,karcher,mlp,conv,determinism}

Exit codes: 0 success, 1 runtime error or failed check, 2 config error.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from typing import Optional, Sequence

from .config import parse_config
from .errors import ConfigError, MalformedCsv, LabelOutOfRange
from .suites import SUITES, run_suite
from .training import run_training

log = logging.getLogger("riemnet")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="riemnet", description="Train manifold-constrained models.")
    p.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = p.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run training from a config file")
    train.add_argument("--config", required=True, help="key = value config file")
    train.add_argument("--seed", type=int, default=None, help="override the config seed")
    train.add_argument("--out", default=None, help="override output_dir")

    check = sub.add_parser("check", help="run a named verification suite")
    check.add_argument("--suite", required=True, choices=sorted(SUITES) + ["all"])
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--out", default=None, help="scratch directory for suites that write files")
    return p


def _train(args) -> int:
    try:
        cfg = parse_config(args.config, overrides={"seed": args.seed, "output_dir": args.out})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        records = run_training(cfg)
    except (ConfigError, MalformedCsv, LabelOutOfRange) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as exit code 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for r in records:
        acc = "" if math.isnan(r.accuracy) else f" accuracy {r.accuracy:.4f}"
        print(f"epoch {r.epoch:4d} loss {r.loss:.8g} residual {r.constraint_residual:.2e}{acc}")
    print(f"wrote {cfg.output_dir}")
    return 0


def _check(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    ok = True
    for name in names:
        try:
            results = run_suite(name, seed=args.seed, out=args.out)
        except Exception as exc:  # noqa: BLE001
            print(f"FAIL {name}: {type(exc).__name__}: {exc}")
            ok = False
            continue
        for r in results:
            print(r.line())
            ok &= r.passed
    return 0 if ok else 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "train":
        return _train(args)
    return _check(args)


if __name__ == "__main__":
    sys.exit(main())
