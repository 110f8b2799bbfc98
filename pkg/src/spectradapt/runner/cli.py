"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 numerical abort.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..tensornn.network import ConfigError
from ..uda.drivers import NumericalAbort
from .config import load_config
from .experiment import (cmd_adapt, cmd_eval, cmd_explain, cmd_gap,
                         cmd_pretrain, cmd_search, cmd_synth)
from .report import cmd_report

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spectradapt",
        description="Synthetic-spectrum domain adaptation workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", required=True, help="experiment JSON")
        if seed:
            p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None,
                       help="override the config output directory")
        p.add_argument("--force", action="store_true",
                       help="overwrite existing outputs")

    p = sub.add_parser("synth", help="generate source/target datasets")
    common(p, seed=False)

    p = sub.add_parser("pretrain", help="source-only supervised training")
    common(p)
    p.add_argument("--arch", required=True)

    p = sub.add_parser("adapt", help="run one UDA method from a checkpoint")
    common(p)
    p.add_argument("--arch", required=True)
    p.add_argument("--method", required=True)
    p.add_argument("--labeled-selection", action="store_true",
                   help="select epochs on labeled target validation "
                        "(off by default)")

    p = sub.add_parser("search", help="random hyperparameter search")
    common(p)
    p.add_argument("--arch", required=True)
    p.add_argument("--method", required=True)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("gap", help="domain-gap characterization report")
    common(p)
    p.add_argument("--arch", default=None)
    p.add_argument("--method", default="source_only")
    p.add_argument("--bootstrap", type=int, default=200)
    p.add_argument("--permutations", type=int, default=199)

    p = sub.add_parser("eval", help="score and diagnose all checkpoints")
    common(p, seed=False)

    p = sub.add_parser("explain", help="per-region Shapley attributions")
    common(p)
    p.add_argument("--arch", required=True)
    p.add_argument("--method", default="source_only")
    p.add_argument("--item", type=int, required=True)
    p.add_argument("--class-id", type=int, default=None)
    p.add_argument("--regions", type=int, default=32)
    p.add_argument("--samples", type=int, default=16)

    p = sub.add_parser("report", help="aggregate scores into tables")
    common(p, seed=False)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.out is not None:
            cfg.out_dir = Path(args.out)
        if args.command == "synth":
            written = cmd_synth(cfg, force=args.force)
            for key, path in written.items():
                print(f"wrote {key}: {path}")
        elif args.command == "pretrain":
            print(cmd_pretrain(cfg, args.arch, args.seed, force=args.force))
        elif args.command == "adapt":
            print(cmd_adapt(cfg, args.method, args.arch, args.seed,
                            force=args.force,
                            labeled_selection=args.labeled_selection))
        elif args.command == "search":
            _, path = cmd_search(cfg, args.method, args.arch, args.trials,
                                 seed=args.seed, epochs=args.epochs,
                                 force=args.force)
            print(path)
        elif args.command == "gap":
            print(cmd_gap(cfg, arch=args.arch, method=args.method,
                          seed=args.seed, bootstrap=args.bootstrap,
                          permutations=args.permutations, force=args.force))
        elif args.command == "eval":
            print(cmd_eval(cfg, force=args.force))
        elif args.command == "explain":
            print(cmd_explain(cfg, args.arch, args.method, args.seed,
                              item=args.item, class_id=args.class_id,
                              n_regions=args.regions,
                              n_samples=args.samples, force=args.force))
        elif args.command == "report":
            print(cmd_report(cfg, force=args.force))
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
