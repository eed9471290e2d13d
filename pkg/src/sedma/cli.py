"""Batch command line: run scenarios, ablate, bench, and replay event streams."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline
from .scenario import SUPPORTED_ABLATIONS, load_scenario


def _apply_overrides(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.noise.seed = args.seed
    if getattr(args, "rounds", None) is not None:
        cfg.rounds = args.rounds
    theta = getattr(args, "theta", None)
    rho = getattr(args, "rho", None)
    if theta is not None or rho is not None:
        from .deploy import TriggerConfig

        cfg.trigger = TriggerConfig(
            theta=theta if theta is not None else cfg.trigger.theta,
            rho=rho if rho is not None else cfg.trigger.rho,
        )
    return cfg


def cmd_run(args) -> int:
    cfg = _apply_overrides(load_scenario(args.scenario), args)
    out_dir = Path(args.out) if args.out else Path(f"out-{cfg.name}")
    result = pipeline.run_scenario(cfg, out_dir=out_dir)
    m = result.metrics
    print(f"run {m.run_id}: {m.rounds} rounds")
    print(f"  residual mean {m.residual_norm_mean:.3e}  lambda {m.lambda_last:.3e}")
    print(
        f"  transfers {m.transfer_successes}/{m.transfer_attempts}"
        f"  cache hit rate {m.cache_hit_rate:.3f}"
    )
    print(f"  placement cost {m.placement_cost:.4f}  recompiles {m.recompile_count}")
    print(f"  outputs in {out_dir}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _apply_overrides(load_scenario(args.scenario), args)
    out_dir = Path(args.out) if args.out else Path(f"out-{cfg.name}")
    rows = pipeline.run_ablation(cfg, args.axes, out_dir=out_dir)
    keys = ("variant", "residual_norm_mean", "transfer_success_rate", "placement_cost")
    for row in rows:
        print("  ".join(f"{k}={row[k]}" for k in keys))
    print(f"summary in {out_dir / 'summary.csv'}")
    return 0


def cmd_bench(args) -> int:
    out_dir = Path(args.out) if args.out else Path("out-bench")
    if args.sweep == "cache":
        rates = pipeline.cache_trace_bench(seed=args.seed or 0)
        rows = [
            {"variant": "utility", "hit_rate": rates["utility_hit_rate"]},
            {"variant": "fifo", "hit_rate": rates["fifo_hit_rate"]},
        ]
        pipeline.write_summary_csv(rows, out_dir / "summary.csv")
        print(f"utility hit rate {rates['utility_hit_rate']:.4f}")
        print(f"fifo    hit rate {rates['fifo_hit_rate']:.4f}")
    elif args.sweep == "dht":
        hops = pipeline.dht_scaling_bench(seed=args.seed or 0)
        rows = [{"variant": f"n={n}", "mean_hops": h} for n, h in sorted(hops.items())]
        pipeline.write_summary_csv(rows, out_dir / "summary.csv")
        for n, h in sorted(hops.items()):
            print(f"N={n}: mean hops {h:.2f}")
    else:
        counts = pipeline.selection_comparisons_bench(seed=args.seed or 0)
        rows = [{"variant": f"p={p}", "comparisons": c} for p, c in sorted(counts.items())]
        pipeline.write_summary_csv(rows, out_dir / "summary.csv")
        for p, c in sorted(counts.items()):
            print(f"p={p}: {c} comparisons")
    print(f"summary in {out_dir / 'summary.csv'}")
    return 0


def cmd_replay(args) -> int:
    path = Path(args.events)
    count = 0
    kinds: dict[str, int] = {}
    last_t = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            event = json.loads(line)
            if "t_ms" not in event:  # leading format tag line
                continue
            t = event["t_ms"]
            if last_t is not None and t < last_t:
                print(f"ERROR: event clock regressed at event {count}", file=sys.stderr)
                return 1
            last_t = t
            kinds[event["kind"]] = kinds.get(event["kind"], 0) + 1
            count += 1
    print(f"{count} events, final t_ms={last_t}")
    for kind in sorted(kinds):
        print(f"  {kind}: {kinds[kind]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sedma",
        description="Adaptive memory architecture simulator (batch)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario")
    p_run.add_argument("scenario")
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--rounds", type=int, default=None)
    p_run.add_argument("--theta", type=float, default=None)
    p_run.add_argument("--rho", type=float, default=None)
    p_run.set_defaults(func=cmd_run)

    p_abl = sub.add_parser("ablate", help="run the full model plus ablated variants")
    p_abl.add_argument("scenario")
    p_abl.add_argument("--axes", nargs="*", default=[], choices=list(SUPPORTED_ABLATIONS))
    p_abl.add_argument("--out", default=None)
    p_abl.add_argument("--seed", type=int, default=None)
    p_abl.add_argument("--rounds", type=int, default=None)
    p_abl.add_argument("--theta", type=float, default=None)
    p_abl.add_argument("--rho", type=float, default=None)
    p_abl.set_defaults(func=cmd_ablate)

    p_bench = sub.add_parser("bench", help="standalone subsystem benches")
    p_bench.add_argument("--sweep", choices=["cache", "dht", "selection"], required=True)
    p_bench.add_argument("--out", default=None)
    p_bench.add_argument("--seed", type=int, default=None)
    p_bench.set_defaults(func=cmd_bench)

    p_replay = sub.add_parser("replay", help="validate and summarize an event stream")
    p_replay.add_argument("events")
    p_replay.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # structured failure for batch callers
        report = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        print(json.dumps(report), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
