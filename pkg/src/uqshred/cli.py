"""Command line: ``uqshred {synth,train,eval,ablate}``."""

from __future__ import annotations

import argparse
import logging
import sys

from uqshred import pipeline
from uqshred.config import ConfigError, RunConfig
from uqshred.data import FieldFormatError
from uqshred.model import CheckpointError

log = logging.getLogger("uqshred")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable, last wins)")
    common.add_argument("--seed", type=int, help="global seed (same as --set seed=N)")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="uqshred", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic field")
    t = sub.add_parser("train", parents=[common], help="train on a field file")
    t.add_argument("--data", required=True)
    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on its test split")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    a = sub.add_parser("ablate", parents=[common], help="sweep one setting")
    a.add_argument("--axis", required=True, choices=pipeline.ABLATION_AXES)
    a.add_argument("--grid", required=True, help="comma-separated values, e.g. 1,5,10")
    a.add_argument("--data", help="field file; synthesized from the config when omitted")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    try:
        cfg = RunConfig.resolve(args.config, overrides)
        if args.command == "synth":
            path = pipeline.cmd_synth(cfg, args.out)
            log.info("wrote %s", path)
        elif args.command == "train":
            path = pipeline.cmd_train(cfg, args.data, args.out)
            log.info("wrote %s", path)
        elif args.command == "eval":
            report = pipeline.cmd_eval(cfg, args.checkpoint, args.data, args.out)
            log.info("rmse %.6g crps %.6g coverage %s", report.rmse, report.crps,
                     {f"{k:g}": round(v, 4) for k, v in sorted(report.coverage.items())})
        else:
            grid = [g for g in args.grid.split(",") if g.strip()]
            path = pipeline.cmd_ablate(cfg, args.axis, grid, args.data, args.out)
            log.info("wrote %s", path)
    except (ConfigError, FieldFormatError, CheckpointError, FileNotFoundError, FloatingPointError, ValueError) as exc:
        log.error("%s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
