"""Command-line interface.

    advcmdp run CONFIG [--out DIR] [--parallel N]
    advcmdp validate CONFIG
    advcmdp plot AGGREGATE_CSV [--out SCRIPT]

Exit codes: 0 success, 1 configuration error, 2 runtime assertion
(monitor/consistency violation), 3 infeasible instance.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .errors import ConfigError, InfeasibleError, MonitorViolation

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_INFEASIBLE = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advcmdp",
        description="Primal-dual policy optimization for constrained linear MDPs "
                    "with adversarial losses: experiment runner.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a multi-seed experiment from a JSON config")
    p_run.add_argument("config", help="path to the experiment config (JSON)")
    p_run.add_argument("--out", default=None, help="output directory (overrides config)")
    p_run.add_argument("--parallel", type=int, default=None,
                       help="worker processes (overrides config)")

    p_val = sub.add_parser("validate", help="check a config and print the effective parameters")
    p_val.add_argument("config", help="path to the experiment config (JSON)")

    p_plot = sub.add_parser("plot", help="write a plotting script for an aggregate CSV")
    p_plot.add_argument("aggregate", help="path to an aggregate CSV")
    p_plot.add_argument("--out", default=None, help="script path (default: alongside the CSV)")
    return parser


def _cmd_run(args) -> int:
    config = harness.load_config(args.config)
    report = harness.run_experiment(config, out_dir=args.out, parallelism=args.parallel)
    for res in report["results"]:
        if res["status"] == "ok":
            s = res["summary"]
            regret = s["final_regret"]
            slope = s["regret_slope_second_half"]
            print(f"seed {res['seed']}: ok  regret={regret:.4g}  "
                  f"violation={s['final_violation']:.4g}  "
                  f"slope={'n/a' if slope is None else format(slope, '.3f')}  "
                  f"epochs={s['epoch_count']}  ({s['elapsed_seconds']:.1f}s)")
        else:
            print(f"seed {res['seed']}: FAILED  {res['error']}", file=sys.stderr)
    if not report["seeds_completed"]:
        print("all seeds failed", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"aggregate: {report['aggregate_csv']}")
    print(f"plot script: {report['plot_script']}")
    if report["seeds_failed"]:
        print(f"warning: {len(report['seeds_failed'])} seed(s) failed; "
              f"aggregate covers {len(report['seeds_completed'])} seed(s)", file=sys.stderr)
    return EXIT_OK


def _cmd_validate(args) -> int:
    config = harness.load_config(args.config)
    report = harness.validate_config(config)
    print(harness.format_validation_report(report))
    return EXIT_OK


def _cmd_plot(args) -> int:
    path = harness.emit_plot_script(args.aggregate, args.out)
    print(f"plot script: {path}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "validate": _cmd_validate, "plot": _cmd_plot}
    try:
        return handlers[args.command](args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as err:
        print(f"infeasible instance: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except MonitorViolation as err:
        print(f"runtime assertion: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
