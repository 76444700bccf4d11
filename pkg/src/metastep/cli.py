"""Command-line entry point: ``metastep <experiment> [flags]`` and ``metastep plot``.

Exit status is 0 on success and 1 when an operation raised.  A meta-GD run
that aborts on overflow is a successful run; the CSV records it with
``status=overflow``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from metastep.config import PARAMS, ConfigError, Experiment, build_config, read_config_file
from metastep.csvio import CsvParseError
from metastep.experiments import run_experiment
from metastep.plot import emit_plot_files

log = logging.getLogger("metastep")


def _fmt_default(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="metastep", description="Step-size meta-learning experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress and timings to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for exp in Experiment:
        sp = sub.add_parser(exp.value, help=f"run the {exp.value} experiment")
        sp.add_argument("--seed", default=None, help="master seed (default 0; env METASTEP_SEED)")
        sp.add_argument("--out", default=None, help=f"output CSV (default {exp.value}.csv)")
        sp.add_argument("--threads", default=None, help="worker threads, integer or 'auto' (default 1)")
        sp.add_argument("--config", default=None, help="key=value file; explicit flags win")
        for name, (_parse, default, help_) in PARAMS[exp].items():
            sp.add_argument(
                "--" + name.replace("_", "-"),
                dest=name,
                default=None,
                metavar="VALUE",
                help=f"{help_} (default {_fmt_default(default)})",
            )
    pp = sub.add_parser("plot", help="render SVG charts from an experiment CSV")
    pp.add_argument("csv", help="experiment CSV file")
    pp.add_argument("--out", default=".", help="output directory (default .)")
    return p


def _run(args: argparse.Namespace) -> None:
    if args.command == "plot":
        for path in emit_plot_files(args.csv, args.out):
            print(path)
        return
    exp = Experiment(args.command)
    file_values = read_config_file(args.config) if args.config else {}
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    cfg = build_config(exp, file_values, flags)
    path = cfg.output_path or f"{exp.value}.csv"
    run_experiment(cfg, path)
    print(path)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        _run(args)
    except (ConfigError, CsvParseError, OSError, ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"metastep: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
