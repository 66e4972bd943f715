"""``dkf-net`` command line: mse, bounds, sweep and pushsum sub-commands.

Exit codes: 0 success, 2 invalid configuration, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, parse_config
from .experiments import run_bounds_report, run_min_pbeta_sweep, run_mse_experiment, run_pushsum

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("dkfnet")


def _parser():
    ap = argparse.ArgumentParser(prog="dkf-net", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in [("mse", "Monte-Carlo MSE table"), ("bounds", "stability bounds per p_beta"),
                        ("sweep", "minimal p_beta per gamma"), ("pushsum", "gain aggregation alone")]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="JSON file or preset name (paper5)")
        p.add_argument("--out", help="output directory (overrides out_dir)")
        p.add_argument("--seed", type=int, help="seed (overrides the config)")
        if name == "sweep":
            p.add_argument("--tol", type=float, default=0.10, help="relative MSE tolerance")
            p.add_argument("--trials", type=int, help="trials per bisection probe")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed", "must be non-negative")
            cfg = replace(cfg, seed=args.seed)
        if args.command == "sweep" and not args.tol >= 0:
            raise ConfigError("tol", "must be non-negative")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or cfg.out_dir)
    try:
        if args.command == "mse":
            table = run_mse_experiment(cfg, out)
            sys.stdout.write(table.to_csv())
        elif args.command == "bounds":
            for r in run_bounds_report(cfg, out):
                print(r.to_text() if hasattr(r, "to_text") else f"error = {r}\n")
        elif args.command == "sweep":
            for g, p in run_min_pbeta_sweep(cfg, args.tol, trials=args.trials, out_dir=out).items():
                print(f"gamma={g} min_p_beta={'none' if p is None else p}")
        else:
            for row in run_pushsum(cfg, out):
                print(" ".join(f"{k}={v}" for k, v in row.items()))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any failure maps to the runtime exit code
        log.debug("run failed", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
