"""Command-line interface: run scenarios, compare runs, recompute metrics."""

import argparse
import json
import sys
from pathlib import Path

from .harness import (ScenarioConfig, compare_runs, metrics_from_series,
                      parse_clock, read_timeseries, run_scenario, write_outputs)


def _cmd_run(args) -> int:
    overrides = {}
    if args.controller:
        overrides["controller"] = args.controller
    if args.seed is not None:
        overrides["seed"] = args.seed
    config = ScenarioConfig.from_toml(args.config, **overrides)
    record = run_scenario(config)
    paths = write_outputs(record, args.out, qp_log=args.qp_log)
    print(f"{config.controller} run (seed {config.seed}, "
          f"{config.duration_days} days) -> {Path(args.out).resolve()}")
    for name, p in paths.items():
        print(f"  {name}: {p}")
    return 0


def _cmd_compare(args) -> int:
    table, payload = compare_runs(args.run_a, args.run_b)
    print(table)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2)
        print(f"comparison written to {args.out}")
    return 0


def _cmd_metrics(args) -> int:
    data = read_timeseries(args.csv)
    start, end = args.overnight.split("-")
    signal = data["cgm"] if args.on_cgm else data["glucose_true"]
    block = metrics_from_series(data["t_min"], signal,
                                overnight=(parse_clock(start), parse_clock(end)))
    text = json.dumps(block.as_dict(), indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
        print(f"metrics written to {args.out}")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glucoloop",
                                     description="Closed-loop glucose control "
                                                 "scenarios with GP-MPC")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one closed-loop scenario")
    p_run.add_argument("--config", required=True, help="scenario TOML file")
    p_run.add_argument("--controller", choices=["mpc", "gp-mpc"],
                       help="override the configured controller")
    p_run.add_argument("--seed", type=int, help="override the configured seed")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--qp-log", action="store_true",
                       help="also write per-step QP diagnostics")
    p_run.set_defaults(func=_cmd_run)

    p_cmp = sub.add_parser("compare", help="paired metrics table of two runs")
    p_cmp.add_argument("run_a")
    p_cmp.add_argument("run_b")
    p_cmp.add_argument("--out", help="write the comparison as JSON")
    p_cmp.set_defaults(func=_cmd_compare)

    p_met = sub.add_parser("metrics", help="recompute metrics from a timeseries CSV")
    p_met.add_argument("--csv", required=True)
    p_met.add_argument("--overnight", default="00:00-07:00",
                       help="overnight clock window, e.g. 00:00-07:00")
    p_met.add_argument("--on-cgm", action="store_true",
                       help="compute on the CGM signal instead of true glucose")
    p_met.add_argument("--out", help="write metrics JSON to a file")
    p_met.set_defaults(func=_cmd_metrics)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
