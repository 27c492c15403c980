"""Command-line driver: one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage or configuration error, 2 missing
prerequisite stage, 3 numerical failure during training or evaluation.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, RunConfig, load_config
from .data import DataError
from .pipeline import STAGES, PrerequisiteMissing, make_context, run_stage
from .training import TrainingDiverged

EXIT_OK, EXIT_USAGE, EXIT_PREREQ, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("edd_har")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _list(kind):
    def parse(text: str):
        try:
            return tuple(kind(v) for v in text.replace(",", " ").split())
        except ValueError:
            raise argparse.ArgumentTypeError(f"cannot parse {text!r} as a list of {kind.__name__}")
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="edd-har", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="stage", required=True, parser_class=_Parser)
    for stage in (*STAGES, "all"):
        p = sub.add_parser(stage, help="run every stage in order" if stage == "all" else f"run the {stage} stage")
        p.add_argument("--config", help="INI config file (defaults apply when omitted)")
        p.add_argument("--run-dir", required=True, help="directory holding checkpoints, logs and reports")
        p.add_argument("--dataset", help="override [data] dataset")
        p.add_argument("--eps", type=_list(float), help="override [eval] eps, e.g. 0,0.05,0.1")
        p.add_argument("--seeds", type=_list(int), help="override [eval] seeds, e.g. 0,1,2")
        p.add_argument("--members", type=int, help="override [training] members")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.dataset:
        cfg.data.dataset = args.dataset
    if args.eps is not None:
        if not args.eps or any(e < 0 for e in args.eps):
            raise ConfigError("--eps: need one or more values >= 0")
        cfg.eval.eps = args.eps
    if args.seeds is not None:
        if not args.seeds or len(set(args.seeds)) != len(args.seeds):
            raise ConfigError("--seeds: need one or more distinct integers")
        cfg.eval.seeds = args.seeds
    if args.members is not None:
        if args.members < 1:
            raise ConfigError("--members: must be >= 1")
        cfg.training.members = args.members
    return cfg


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as stop:
        return int(stop.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        ctx = make_context(cfg, args.run_dir)
        stages = STAGES if args.stage == "all" else (args.stage,)
        for stage in stages:
            did = run_stage(ctx, stage, cfg.eval.seeds)
            if not any(did):
                print(f"{stage}: up to date")
            else:
                print(f"{stage}: done")
    except (ConfigError, DataError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except PrerequisiteMissing as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_PREREQ
    except (TrainingDiverged, FloatingPointError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
