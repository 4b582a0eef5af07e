"""Command line entry point: ``run``, ``check-gcc`` and ``version``.

Exit codes: 0 success, 1 GCC check failed, 2 bad config or usage,
3 numerical failure (the record is still written), 4 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .experiments import ConfigError, ExperimentConfig, check_gcc, dumps_json, export_record, run_experiment

EXIT_OK, EXIT_GCC_FAIL, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3, 4

log = logging.getLogger("nlsobs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlsobs", description="Observability and reconstruction experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="{run,check-gcc,version}")
    run = sub.add_parser("run", help="run an experiment config and export its record")
    run.add_argument("config", help="JSON experiment config")
    run.add_argument("-o", "--output", help="output path stem (overrides the config)")
    run.add_argument("--format", choices=("csv", "json", "both"), default="both")
    run.add_argument("--workers", type=int, help="override the worker count")
    gcc = sub.add_parser("check-gcc", help="ray-sample the geometric control condition for a config's window")
    gcc.add_argument("config", help="JSON experiment config")
    gcc.add_argument("--T0", type=float, help="override the control time")
    sub.add_parser("version", help="print the package version")
    return parser


def _load(path: str) -> ExperimentConfig:
    return ExperimentConfig.from_file(path)


def _cmd_run(args) -> int:
    cfg = _load(args.config)
    if args.workers is not None:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "workers": args.workers})
    stem = Path(args.output or cfg.output)
    log.info("running %s experiment", cfg.kind)
    record = run_experiment(cfg)
    formats = ("csv", "json") if args.format == "both" else (args.format,)
    for fmt in formats:
        out = export_record(record, stem.with_name(stem.name + "." + fmt), fmt)
        print(out)
    meta = stem.with_name(stem.name + ".timing.json")
    meta.write_text(dumps_json({"duration": record.duration}) + "\n", encoding="utf-8")
    if record.summary:
        print(dumps_json(record.summary))
    if record.status != "ok":
        print(f"numerical failure: {record.diagnostics}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _cmd_check_gcc(args) -> int:
    cfg = _load(args.config)
    if args.T0 is not None:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "gcc": {**cfg.to_dict()["gcc"], "T0": args.T0}})
    report = check_gcc(cfg)
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_GCC_FAIL


def cli_main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    if args.command == "version":
        print(__version__)
        return EXIT_OK
    handler = _cmd_run if args.command == "run" else _cmd_check_gcc
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
