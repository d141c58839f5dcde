"""Command line entry points: train, eval, sweep-sa, flops, validate-config."""

from __future__ import annotations

import argparse
import json
import sys

from . import harness
from .nets import flops_estimate
from .scenario import ScenarioError, load_scenario, serialize_scenario


def _add_common(parser, scenario_required=True):
    parser.add_argument("--scenario", required=scenario_required,
                        help="path to a scenario file")
    parser.add_argument("--seed", type=int, default=None,
                        help="run only this seed (overrides the scenario list)")
    parser.add_argument("--out", default=None, help="directory for run artifacts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noma-urllc",
                                     description="NOMA uplink URLLC scheduling runs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the scenario's PPO agent")
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a baseline or a trained checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", default=None, help="checkpoint for PPO agents")

    p = sub.add_parser("sweep-sa", help="grid-search the grant-free transmit probability")
    _add_common(p)

    p = sub.add_parser("flops", help="per-decision cost of the compared architectures")
    _add_common(p, scenario_required=False)
    p.add_argument("--devices", type=int, default=18)
    p.add_argument("--hidden", type=int, default=256)

    p = sub.add_parser("validate-config", help="check a scenario and echo its canonical form")
    _add_common(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "flops":
        devices = args.devices
        if args.scenario:
            devices = load_scenario(args.scenario).devices
        for arch in ("noma_ppo", "bdq", "idrqn_agent"):
            total = flops_estimate(arch, devices, args.hidden)
            print(f"{arch:12s} K={devices} H={args.hidden}: {total} flops")
        return 0

    sc = load_scenario(args.scenario)
    seeds = [args.seed] if args.seed is not None else None

    if args.command == "validate-config":
        print(serialize_scenario(sc), end="")
        return 0
    if args.command == "train":
        report = harness.run_training(sc, seeds=seeds, out_dir=args.out)
        _print_summary(report)
        return 0
    if args.command == "eval":
        report = harness.run_evaluation(sc, seeds=seeds,
                                        checkpoint_path=args.checkpoint,
                                        out_dir=args.out)
        _print_summary(report)
        return 0
    if args.command == "sweep-sa":
        result = harness.sweep_sa(sc, seed=args.seed)
        print(json.dumps(result, indent=2))
        return 0
    raise ValueError(f"unhandled command {args.command!r}")


def _print_summary(report: dict):
    print(f"agent={report['agent']} K={report['devices']} "
          f"mean URLLC score={report['mean_urllc_score']:.4f} "
          f"({report['wall_clock_seconds']:.1f}s)")
    for seed in report["seeds"]:
        ev = report["evaluation"][str(seed)]
        print(f"  seed {seed}: score={ev['urllc_score']:.4f} "
              f"jain={ev['jain_index']:.4f} generated={ev['generated']}")


if __name__ == "__main__":
    sys.exit(main())
