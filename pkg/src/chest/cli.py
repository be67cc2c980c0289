"""Command-line pipeline: gen-data -> train -> sweep -> report."""

from __future__ import annotations

import argparse
import sys

from .config import load_config
from .harness import generate_data, run_sweep, train_models, write_report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chest",
        description="Channel estimation experiments with diffusion-prior mixtures.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate per-environment channel datasets")
    p.add_argument("--config", required=True, help="experiment JSON file")

    p = sub.add_parser("train", help="train expert and/or aggregated denoisers")
    p.add_argument("--config", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--expert", help="train only this environment's expert")
    group.add_argument("--aggregated", action="store_true",
                       help="train only the aggregated model")

    p = sub.add_parser("sweep", help="run all estimator/environment/SNR cells")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("report", help="aggregate a sweep CSV into TSV tables")
    p.add_argument("--in", dest="in_csv", required=True)
    p.add_argument("--out-dir", required=True)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gen-data":
            generate_data(load_config(args.config))
        elif args.command == "train":
            train_models(load_config(args.config), expert=args.expert,
                         aggregated=args.aggregated)
        elif args.command == "sweep":
            run_sweep(load_config(args.config), args.out)
        elif args.command == "report":
            write_report(args.in_csv, args.out_dir)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
