"""Command line entry points.

  duo train    --config FILE   source-train a detector, write checkpoint
  duo run      --config FILE   one adaptation stream (CSV + summary JSON)
  duo obs1     --config FILE   score-quartile study {none, entropy_min, duo}
  duo obs2     --config FILE   uncertainty-collapse study {depth_unc_min, duo}
  duo ablate   --config FILE   component grid (6 rows)
  duo sweep    --config FILE   lambda/alpha grid with the duo objective
  duo selftest [--fast]        run the property suite in-process

Exit codes: 0 success; 1 a directional assertion or quality gate failed;
2 missing checkpoint; 3 invalid configuration.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_NO_CHECKPOINT = 2
EXIT_BAD_CONFIG = 3


def _collect_assertions(report: dict, prefix: str = "") -> list:
    failures = []
    for key, value in report.get("assertions", {}).items():
        if not value:
            failures.append(prefix + key)
    for key, value in report.items():
        if isinstance(value, dict) and key != "assertions":
            failures.extend(_collect_assertions(value, prefix=f"{key}."))
    return failures


def _print_assertions(report: dict) -> int:
    failures = _collect_assertions(report)
    for key, value in sorted(report.get("assertions", {}).items()):
        print(f"  {key}: {'ok' if value else 'FAILED'}")
    if failures:
        print("failed: " + ", ".join(failures), file=sys.stderr)
        return EXIT_ASSERTION
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="duo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "run", "obs1", "obs2", "ablate", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="flat key=value config file")
    p_self = sub.add_parser("selftest")
    p_self.add_argument("--fast", action="store_true", help="smaller sample counts")
    args = parser.parse_args(argv)

    if args.command == "selftest":
        from .checks import run_selftest

        return EXIT_OK if run_selftest(fast=args.fast) else EXIT_ASSERTION

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG

    from . import experiments as ex

    try:
        if args.command == "train":
            report = ex.run_train(cfg)
            print(
                f"clean f1 {report['clean_f1']:.4f} depth rel {report['clean_depth_rel']:.4f}"
            )
            return _print_assertions(report)
        if args.command == "run":
            summary = ex.run_stream(cfg)
            print(
                f"{summary['objective']} on {summary['corruption']} s{summary['severity']}: "
                f"f1 {summary['f1']:.4f} mae {summary['depth_mae']:.4f} "
                f"skipped {summary['skipped_steps']}"
            )
            return EXIT_OK
        if args.command == "obs1":
            report = ex.run_observation1(cfg)
            for m, row in report["methods"].items():
                print(
                    f"  {m:12s} dq25 {row['dq25']:+.4f} dq75 {row['dq75']:+.4f} "
                    f"skew {row['skew']:.3f}"
                )
            return _print_assertions(report)
        if args.command == "obs2":
            report = ex.run_observation2(cfg)
            for m, row in report["methods"].items():
                print(f"  {m:14s} collapse ratio {row['collapse_ratio']:.3f}")
            return _print_assertions(report)
        if args.command == "ablate":
            report = ex.run_ablation(cfg)
            for label, row in report["rows"].items():
                print(f"  {label:9s} f1 {row['f1']:.4f} mae {row['depth_mae']:.4f}")
            return _print_assertions(report)
        if args.command == "sweep":
            report = ex.run_sweep(cfg)
            for row in report["rows"]:
                print(
                    f"  lambda {row['lambda']:.3g} alpha {row['alpha']:.3g} "
                    f"f1 {row['f1']:.4f} mae {row['depth_mae']:.4f}"
                )
            return EXIT_OK
    except ex.CheckpointMissing as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_NO_CHECKPOINT
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
