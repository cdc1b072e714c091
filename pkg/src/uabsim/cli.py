"""Command-line front end.

Subcommands: train, eval, compare, gen-traces, coverage. Every SimConfig
field is addressable as a ``--field-name`` flag; a ``--config`` file and
the ``--preset desk`` reduced scale can be combined with flag overrides
(flags win). Exits nonzero on any error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

from . import harness
from .config import DESK_OVERRIDES, SimConfig
from .errors import UabsimError
from .mobility import generate_manhattan_traces, save_traces


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="flat key=value config file")
    parser.add_argument("--preset", choices=["full", "desk"], default="full",
                        help="desk = reduced scale for quick runs")
    parser.add_argument("--seed", type=int, help="alias for --rng-seed")
    parser.add_argument("--mode", choices=["penalty", "flat_mask", "rank_mask"],
                        help="alias for --safety-mode")
    group = parser.add_argument_group("config overrides")
    for f in fields(SimConfig):
        group.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}",
                           metavar="V", help=argparse.SUPPRESS)


def _build_config(args) -> SimConfig:
    mapping: dict = {}
    if args.preset == "desk":
        mapping.update(DESK_OVERRIDES)
    if args.config:
        from .config import parse_config_file
        mapping.update(parse_config_file(args.config))
    for f in fields(SimConfig):
        value = getattr(args, f"cfg_{f.name}", None)
        if value is not None:
            mapping[f.name] = value
    if args.seed is not None:
        mapping["rng_seed"] = args.seed
    if args.mode is not None:
        mapping["safety_mode"] = args.mode
    return SimConfig.from_mapping(mapping)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uabsim",
                                     description="aerial base-station fleet simulator and trainer")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a policy and emit metrics")
    p_train.add_argument("--out-dir", default="runs/train", help="output directory")
    p_train.add_argument("--traces", metavar="FILE", help="training trace CSV (default: generated)")
    p_train.add_argument("--eval-traces", metavar="FILE", help="held-out trace CSV")
    _add_config_flags(p_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint greedily")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--out-dir", default="runs/eval")
    p_eval.add_argument("--traces", metavar="FILE", help="trace CSV (default: held-out stream)")
    _add_config_flags(p_eval)

    p_cmp = sub.add_parser("compare", help="train and compare safety modes over seeds")
    p_cmp.add_argument("--out-dir", default="runs/compare")
    p_cmp.add_argument("--modes", default="penalty,flat_mask,rank_mask")
    p_cmp.add_argument("--seeds", default="0,1,2,3,4")
    _add_config_flags(p_cmp)

    p_gen = sub.add_parser("gen-traces", help="generate street-grid traces to CSV")
    p_gen.add_argument("--out", required=True, metavar="FILE")
    _add_config_flags(p_gen)

    p_cov = sub.add_parser("coverage", help="report the instantaneous coverage fraction")
    p_cov.add_argument("--reference", type=float, default=None,
                       help="external fraction to print alongside the computed one")
    _add_config_flags(p_cov)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _build_config(args)
        if args.command == "train":
            result = harness.train(config, args.out_dir,
                                   traces_path=args.traces, eval_traces_path=args.eval_traces)
            print(f"wrote {result.out_dir}/metrics.csv"
                  + (f", best eval R = {result.best_eval_reward:.1f}"
                     if result.best_eval_reward is not None else ""))
        elif args.command == "eval":
            row = harness.evaluate_checkpoint(args.checkpoint, config, traces_path=args.traces)
            out = Path(args.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            harness._write_metrics_csv(out / "metrics.csv", [row])
            harness._write_eval_pg_csv(out / "eval_pg.csv", [row])
            harness.write_service_log_csv(out / "service_log.csv", row)
            print(f"eval reward {row.reward:.1f}, collisions {row.collision_events}, "
                  f"Pg(default)={row.pg_default:.4f}")
        elif args.command == "compare":
            modes = [m.strip() for m in args.modes.split(",") if m.strip()]
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
            table = harness.compare(config, modes, seeds, args.out_dir)
            print((Path(args.out_dir) / "compare_summary.txt").read_text(), end="")
        elif args.command == "gen-traces":
            rng = harness.rng_stream(config.rng_seed, harness.S_TRACE_TRAIN, 0)
            traces = generate_manhattan_traces(config, rng=rng)
            save_traces(traces, args.out)
            print(f"wrote {len(traces)} traces x {config.episode_len + 1} steps to {args.out}")
        elif args.command == "coverage":
            harness.coverage_report(config, reference=args.reference)
    except UabsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
