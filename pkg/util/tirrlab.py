#!/usr/bin/env python3
# Copyright 2026 The tirrlab Authors.
# Licensed under the Apache License, Version 2.0, see LICENSE for details.
# SPDX-License-Identifier: Apache-2.0
"""Reciprocal recommendation lab: generate, train, evaluate, project, report."""

import argparse
import logging as log
import pathlib
import sys

from tirrlab.config import RunConfig, define_arg_type
from tirrlab.errors import TirrError
from tirrlab.pipeline import (MODELS, STAGES, cmd_evaluate, cmd_generate, cmd_project,
                              cmd_report, cmd_train)


def parse_args(argv):
    parser = argparse.ArgumentParser(prog="tirrlab", description=__doc__)
    parser.add_argument("--cfg",
                        "-c",
                        metavar="file",
                        type=argparse.FileType('r'),
                        help="Run configuration (HJSON). Defaults apply if omitted.")
    parser.add_argument("--outdir",
                        "-o",
                        type=pathlib.Path,
                        required=True,
                        help="Artifact directory.")
    parser.add_argument('--cfg-override',
                        '-D',
                        dest="cfg_overrides",
                        action="append",
                        type=define_arg_type,
                        default=[],
                        help='Override a setting in the configuration. '
                             'Format: -Dsome.key=value. '
                             'Can be used multiple times.')
    parser.add_argument('--verbose', '-v', action='store_true', help='Verbose')

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", help="Simulate the service and write data and splits")
    train = sub.add_parser("train", help="Run one training stage")
    train.add_argument("--stage", choices=STAGES, required=True)
    evaluate = sub.add_parser("evaluate", help="Evaluate models on the held-out split")
    evaluate.add_argument("models", nargs="*", choices=MODELS,
                          help="Models to evaluate (default from the configuration)")
    sub.add_parser("project", help="Export 2-D projections of Siamese difference vectors")
    sub.add_parser("report", help="Render the markdown run summary")
    return parser.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    if args.verbose:
        log.basicConfig(format="%(levelname)s: %(message)s", level=log.DEBUG)
    else:
        log.basicConfig(format="%(levelname)s: %(message)s", level=log.INFO)

    try:
        if args.cfg is None:
            cfg = RunConfig(overrides=args.cfg_overrides)
        else:
            cfg = RunConfig.from_file(args.cfg, args.cfg_overrides)

        if args.command == "generate":
            cmd_generate(cfg, args.outdir)
        elif args.command == "train":
            cmd_train(cfg, args.outdir, args.stage)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.outdir, args.models)
        elif args.command == "project":
            cmd_project(cfg, args.outdir)
        elif args.command == "report":
            cmd_report(cfg, args.outdir)
    except TirrError as err:
        log.fatal(str(err))
        raise SystemExit(err.exit_code)
    except ValueError as err:
        log.fatal(str(err))
        raise SystemExit(1)


if __name__ == "__main__":
    main(sys.argv[1:])
