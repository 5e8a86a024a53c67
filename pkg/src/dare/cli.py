"""Command-line surface: map generation, demonstrations, training,
single-episode exploration and planner comparison.

Exit codes: 0 success, 1 usage error, 2 runtime failure. A JSON config
file can pre-set any flag; explicit command-line flags win.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


PLANNER_NAMES = ("nearest", "utility", "dare", "oracle", "stay")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def parse_seed_list(text: str) -> list[int]:
    """Seed list syntax: comma-separated integers and inclusive a..b ranges
    (e.g. `1..4,9` -> [1, 2, 3, 4, 9])."""
    seeds = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..")
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ValueError(f"empty seed list: {text!r}")
    return seeds


def _build_parser() -> _Parser:
    parser = _Parser(prog="dare", description=__doc__)
    parser.add_argument("--config", help="JSON file pre-setting any flag")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-maps", help="write ground-truth maps as env_<seed>.pgm")
    p.add_argument("--seeds", required=True, help="e.g. 1..10 or 3,5,8")
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)

    p = sub.add_parser("demo", help="generate oracle demonstrations")
    p.add_argument("--envs", required=True, help="seed stream to draw from")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=None, help="stop after this many demos")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--restarts", type=int, default=32)

    p = sub.add_parser("train", help="behavior-clone the policy from demos")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--paper-scale", action="store_true",
                   help="use the published 130-epoch/batch-256/d-128 protocol")

    p = sub.add_parser("explore", help="run one exploration episode")
    p.add_argument("--planner", required=True, choices=PLANNER_NAMES)
    p.add_argument("--env", type=int, required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--record", help="prefix for trajectory dump + belief PGM")
    p.add_argument("--seed", type=int, default=None,
                   help="planner rng stream (defaults to the env seed)")

    p = sub.add_parser("compare", help="paired planner comparison")
    p.add_argument("--planners", required=True, help="comma list, e.g. nearest,utility")
    p.add_argument("--seeds", required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--reference")
    p.add_argument("--timing", action="store_true",
                   help="record wall-clock plan times (breaks byte reproducibility)")
    return parser


def _apply_config(argv: list[str], parser: _Parser):
    """Parse argv with JSON-config defaults: config values act as defaults,
    explicit flags override them."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    with open(args.config) as f:
        config = json.load(f)
    merged = []
    for key, value in config.items():
        flag = "--" + key.replace("_", "-")
        if flag in argv:
            continue  # explicit flag wins
        if isinstance(value, bool):
            if value:
                merged.append(flag)
        else:
            merged.extend([flag, str(value)])
    return parser.parse_args(argv + merged)


def _cmd_gen_maps(args) -> int:
    from .world import env_filename, generate_dungeon, write_pgm

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for seed in parse_seed_list(args.seeds):
        truth = generate_dungeon(seed, args.width, args.height)
        write_pgm(out / env_filename(seed), truth.cells, truth.resolution)
        print(f"wrote {out / env_filename(seed)}")
    return 0


def _demo_worker(seed_and_cfg):
    seed, restarts = seed_and_cfg
    from .dataset import RejectedEnvironment, rollout_expert
    from .episode import SimConfig

    sim = SimConfig(oracle_restarts=restarts)
    try:
        return seed, rollout_expert(seed, sim)
    except RejectedEnvironment as err:
        return seed, str(err)


def _cmd_demo(args) -> int:
    from .dataset import DemonstrationRecord, demo_filename, save_demo, write_manifest

    seeds = parse_seed_list(args.envs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    jobs = [(seed, args.restarts) for seed in seeds]
    if args.workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        pool = ProcessPoolExecutor(max_workers=args.workers)
        stream = pool.map(_demo_worker, jobs, chunksize=4)
    else:
        stream = map(_demo_worker, jobs)
    for seed, record in stream:
        if args.count is not None and len(entries) >= args.count:
            break
        if isinstance(record, str):
            print(f"rejected seed {seed}: {record}", file=sys.stderr)
            continue
        fname = demo_filename(seed)
        save_demo(record, out / fname)
        entries.append(
            {
                "seed": seed,
                "file": fname,
                "length": len(record),
                "oracle_cost": record.oracle_cost,
                "distance": record.distance,
            }
        )
        print(f"demo seed={seed} steps={len(record)} distance={record.distance:.1f}")
    if args.workers > 1:
        pool.shutdown(cancel_futures=True)
    write_manifest(out, entries)
    print(f"{len(entries)} demonstrations in {out}")
    return 0


def _cmd_train(args) -> int:
    from .dataset import load_demo_dir
    from .training import desk_config, paper_config, train

    records = load_demo_dir(args.data)
    make = paper_config if args.paper_scale else desk_config
    cfg = make(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        seed=args.seed,
    )
    result = train(records, cfg, args.out, log=print)
    print(
        f"trained {cfg.epochs} epochs on {len(records)} demos; "
        f"best epoch {result.best_epoch} loss {min(result.epoch_losses):.5f}; "
        f"checkpoints in {args.out}"
    )
    return 0


def _cmd_explore(args) -> int:
    from .episode import SimConfig, make_planner, run_episode
    from .world import write_pgm

    sim = SimConfig()
    planner = make_planner(args.planner, checkpoint=args.checkpoint)
    result = run_episode(
        planner, args.env, sim, keep_final_belief=bool(args.record), planner_seed=args.seed
    )
    print(
        f"planner={args.planner} env={args.env} distance_m={result.distance_m:.3f} "
        f"steps={result.steps} completed={str(result.completed).lower()}"
    )
    if args.record:
        traj_path = Path(f"{args.record}_traj.txt")
        with open(traj_path, "w") as f:
            for i, (x, y) in enumerate(result.poses):
                f.write(f"{i} {x:.3f} {y:.3f}\n")
        pgm_path = Path(f"{args.record}_belief.pgm")
        write_pgm(pgm_path, result.final_belief.cells, result.final_belief.resolution)
        print(f"wrote {traj_path} and {pgm_path}")
    return 0


def _cmd_compare(args) -> int:
    from .evaluation import compare, write_csv

    planners = [p.strip() for p in args.planners.split(",") if p.strip()]
    unknown = [p for p in planners if p not in PLANNER_NAMES]
    if unknown:
        raise _UsageError(f"unknown planner(s): {', '.join(unknown)}")
    report = compare(
        planners,
        parse_seed_list(args.seeds),
        checkpoint=args.checkpoint,
        reference=args.reference,
    )
    write_csv(report, args.csv, timing=args.timing)
    for s in report.summaries:
        print(
            f"{s.name}: mean {s.mean:.1f} m, completed {s.completed}/{s.episodes}"
        )
    print(f"report written to {args.csv}")
    return 0


_COMMANDS = {
    "gen-maps": _cmd_gen_maps,
    "demo": _cmd_demo,
    "train": _cmd_train,
    "explore": _cmd_explore,
    "compare": _cmd_compare,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = _apply_config(list(sys.argv[1:] if argv is None else argv), parser)
    except _UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError, ValueError) as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except _UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
