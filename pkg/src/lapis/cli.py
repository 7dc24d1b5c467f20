#  Copyright (c) 2026. The lapis developers
#  This file is part of the lapis project.
#  Please respect the license - more about this in the section (*) below.
#
#  lapis is free software: you can redistribute it and/or modify
#  it under the terms of the GNU General Public License as published by
#  the Free Software Foundation, either version 3 of the License, or
#  (at your option) any later version.
#
#  lapis is distributed in the hope that it will be useful,
#  but WITHOUT ANY WARRANTY; without even the implied warranty of
#  MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
#  GNU General Public License for more details.
#
#  You should have received a copy of the GNU General Public License
#  along with lapis.  If not, see <http://www.gnu.org/licenses/>.
#
#  (*) Removing authorship by any means, e.g. by distribution of derived
#  works or verbatim, obfuscated, compiled or rewritten versions of any
#  part of this work is illegal and unethical regarding the effort and
#  time spent here.
"""Command-line interface

    lapis run <config>... [--jobs N] [--seed S] [--out DIR]
    lapis gantt <trace> <out.svg>
    lapis bench-attention --n 177 --d 64 --k 30 --bits 4 --seed 0
    lapis allocate <config>

Exit code 0 on success, 1 with a one-line diagnostic on stderr for any lapis error, 2 for usage errors.
"""
import argparse
import logging
import sys
from pathlib import Path

from lapis.config import setup
from lapis.encoder_graph import dumps_allocation
from lapis.experiment import emit_gantt, plan, run_many, spot_check
from lapis.misc.exception import LapisError, ParseError
from lapis.numerics import SUPPORTED_BITS
from lapis.pipeline_sim import loads_trace
from lapis.theme import FORMATS
from lapis.workload import load_config, with_overrides

logger = logging.getLogger(__name__)


def parser():
    ap = argparse.ArgumentParser(prog="lapis", description="Length-aware encoder pipelines with Top-k sparse attention")
    ap.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debugging detail")
    ap.add_argument("--format", choices=sorted(FORMATS), default="bw", help="summary rendering")
    ap.add_argument("--window", choices=["stage", "global"], default="stage", help="utilization window")
    sub = ap.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="simulate experiments and write their reports")
    run.add_argument("configs", nargs="+", type=Path)
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory, overriding the configs")

    gantt = sub.add_parser("gantt", help="draw a trace file as an SVG timing diagram")
    gantt.add_argument("trace", type=Path)
    gantt.add_argument("out", type=Path)

    bench = sub.add_parser("bench-attention", help="compare sparse and dense attention on a random problem")
    bench.add_argument("--n", type=int, default=177)
    bench.add_argument("--d", type=int, default=64)
    bench.add_argument("--k", type=int, default=30)
    bench.add_argument("--bits", type=int, choices=SUPPORTED_BITS, default=4)
    bench.add_argument("--seed", type=int, default=0)

    allocate = sub.add_parser("allocate", help="print the stage allocation of an experiment")
    allocate.add_argument("config", type=Path)
    allocate.add_argument("--seed", type=int)
    return ap


def cmd_run(args):
    configs = [with_overrides(load_config(path), args.seed, args.out) for path in args.configs]
    logger.info(f"{len(configs)} experiments on {max(1, args.jobs)} processes")
    for report in run_many(configs, args.jobs):
        print(report.summary(FORMATS[args.format]), end="")
        print(f"written to {report.dir}")


def cmd_gantt(args):
    try:
        text = args.trace.read_text()
    except OSError as e:
        raise ParseError(f"Cannot read {args.trace}: {e.strerror}")
    print(emit_gantt(loads_trace(text), args.out))


def cmd_bench(args):
    for key, value in spot_check(args.n, args.d, args.k, args.bits, args.seed).items():
        print(f"{key}\t{value}")


def cmd_allocate(args):
    *_, alloc = plan(with_overrides(load_config(args.config), args.seed))
    print(dumps_allocation(alloc))


COMMANDS = {"run": cmd_run, "gantt": cmd_gantt, "bench-attention": cmd_bench, "allocate": cmd_allocate}


def main(argv=None):
    args = parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    setup(format=FORMATS[args.format], window=args.window)
    try:
        COMMANDS[args.verb](args)
    except LapisError as e:
        print(f"lapis: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
