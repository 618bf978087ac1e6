"""Command-line entry point: ``posadv <command> [--config FILE] [--seed N] ...``."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import PosAdvError, StageFailed
from .pipeline import RunConfig, load_config, run_stages

COMMANDS = {
    "prepare": ["prepare"],
    "train": ["prepare", "train"],
    "random-study": ["random-study"],
    "phase1": ["phase1"],
    "phase2": ["phase2"],
    "phase3": ["phase3"],
    "sweep": ["sweep"],
    "report": ["report"],
    "run": None,  # the config's stage list
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="posadv", description="POS-targeted deletion attacks on a CNN sentiment classifier.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value file; flags below override it")
        p.add_argument("--seed", type=int)
        p.add_argument("--dataset", choices=("imdb", "amazon", "yelp", "custom"))
        p.add_argument("--data-path", dest="data_path")
        p.add_argument("--embeddings", help="GloVe-format vector file (default: build one from unlabeled IMDB text)")
        p.add_argument("--pos", help="POS set such as VERB_ADJ_NOUN")
        p.add_argument("--ratio", type=float, help="deletion ratio in percent")
        p.add_argument("--out", default="runs/default", help="run directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = cfg.with_overrides(
            seed=args.seed, dataset=args.dataset, data_path=args.data_path,
            embeddings=args.embeddings, pos=args.pos, ratio=args.ratio,
        )
        stages = COMMANDS[args.command] or cfg.stage_list()
        run_stages(cfg, args.out, stages)
    except StageFailed as exc:
        print(f"posadv: stage {exc.stage!r} failed: {type(exc.cause).__name__}: {exc.cause}", file=sys.stderr)
        return 1
    except (PosAdvError, ValueError) as exc:
        print(f"posadv: stage 'config' failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(f"{args.command}: done ({args.out})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
