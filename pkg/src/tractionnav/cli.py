"""Command line entry point: episode, batch, collect, labelgen."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import CONTROLLERS, ConfigError, load_config
from . import harness


def _controllers(text: str) -> list[str]:
    kinds = [k.strip() for k in text.split(",") if k.strip()]
    bad = [k for k in kinds if k not in CONTROLLERS]
    if bad or not kinds:
        raise argparse.ArgumentTypeError(f"controllers must be a comma list drawn from {','.join(CONTROLLERS)}")
    return kinds


def _positive_int(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def _positive_float(text: str) -> float:
    x = float(text)
    if x <= 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return x


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tractionnav", description="Traction-aware navigation simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("episode", help="run one closed-loop episode")
    e.add_argument("--config", required=True)
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--controller", choices=CONTROLLERS, default=None)
    e.add_argument("--out", required=True)

    b = sub.add_parser("batch", help="run N episodes per controller and tabulate success rates")
    b.add_argument("--config", required=True)
    b.add_argument("--runs", type=_positive_int, required=True)
    b.add_argument("--controllers", type=_controllers, default=list(CONTROLLERS))
    b.add_argument("--first-seed", type=int, default=0)
    b.add_argument("--jobs", type=_positive_int, default=1, help="worker processes")
    b.add_argument("--out", required=True)

    c = sub.add_parser("collect", help="drive a scripted route and build a label dataset")
    c.add_argument("--config", required=True)
    c.add_argument("--duration", type=_positive_float, required=True)
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--out", required=True)

    g = sub.add_parser("labelgen", help="build a label dataset from a collected log directory")
    g.add_argument("--log", required=True)
    g.add_argument("--config", default=None, help="defaults to <log>/config.yaml")
    g.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "episode":
            cfg = load_config(args.config)
            kw = {}
            if args.seed is not None:
                kw["seed"] = args.seed
            if args.controller:
                kw["controller"] = args.controller
            res = harness.run_episode(cfg.with_(**kw), args.out)
            print(json.dumps(res.summary(), sort_keys=True))
            return 0
        if args.command == "batch":
            cfg = load_config(args.config)
            seeds = list(range(args.first_seed, args.first_seed + args.runs))

            def progress(r):
                if args.verbose:
                    print(f"{r.controller} seed={r.seed} {r.outcome} t={r.elapsed:.1f}", file=sys.stderr)
            table, _ = harness.run_batch(cfg, seeds, args.controllers, args.out, progress, args.jobs)
            print(harness.format_table(table))
            return 0
        if args.command == "collect":
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg = cfg.with_(seed=args.seed)
            collected, frames = harness.collect_dataset(cfg, args.duration, args.out)
            print(f"logged {len(collected.log)} labeled poses, wrote {len(frames)} frames to {args.out}")
            return 0
        if args.command == "labelgen":
            cfg = load_config(args.config) if args.config else None
            frames = harness.labelgen(args.log, args.out, cfg)
            print(f"wrote {len(frames)} frames to {args.out}")
            return 0
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
