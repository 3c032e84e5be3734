"""Command-line entry point: run, compare, rate-check, energy-check."""

from __future__ import annotations

import argparse
import sys

from . import harness


def _add_config_args(sub):
    sub.add_argument("config", help="YAML config file")
    sub.add_argument("--out", default="out", help="output directory")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the config seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="distagm",
        description="Distributed accelerated gradient flow simulator")
    subs = parser.add_subparsers(dest="command", required=True)

    _add_config_args(subs.add_parser(
        "run", help="execute configured algorithms and write traces"))
    _add_config_args(subs.add_parser(
        "compare", help="run >= 2 algorithms and emit a comparison table"))
    _add_config_args(subs.add_parser(
        "energy-check", help="integrate the flow and report energy drift"))

    rate = subs.add_parser("rate-check",
                           help="fit a convergence slope from a trace CSV")
    rate.add_argument("trace", help="trace CSV produced by run/compare")
    rate.add_argument("--beta", type=float, required=True)
    rate.add_argument("--window", type=float, nargs=2, default=None,
                      metavar=("LO", "HI"))
    rate.add_argument("--tail-fraction", type=float, default=0.5)
    rate.add_argument("--tolerance", type=float, default=0.3)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "rate-check":
        try:
            return harness.cmd_rate_check(
                args.trace, args.beta,
                window=tuple(args.window) if args.window else None,
                tail_fraction=args.tail_fraction, tolerance=args.tolerance)
        except (ValueError, OSError) as err:
            print(f"error: {err}", file=sys.stderr)
            return harness.EXIT_CONFIG
    try:
        cfg = harness.load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.command == "run":
            return harness.cmd_run(cfg, args.out)
        if args.command == "compare":
            return harness.cmd_compare(cfg, args.out)
        return harness.cmd_energy_check(cfg, args.out)
    except harness.ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return harness.EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
