"""Command-line entry point: ``dsmt-sim run|asm|sweep``."""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from pydantic import ValidationError

from core.assembler import assemble_file, write_image
from core.config import build_config, load_config_file
from core.errors import SimulatorError
from core.harness import load_sweep_file, resolve_kernel, run_experiment, run_sweep
from core.report import Verdict, csv_header, emit_report, format_summary, summarize

logger = logging.getLogger("dsmt-sim")

EXIT_PASS = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

LOAD_ERRORS = (SimulatorError, OSError, ValidationError, ValueError)


def _pairs(items: Optional[Sequence[str]], what: str) -> Dict[str, str]:
    values = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ValueError(f"{what} expects KEY=VALUE, got '{item}'")
        values[key] = value
    return values


def _write(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
        logger.info(f"Wrote {out}")
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsmt-sim", description="Cycle-level DSMT loop-thread simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="simulate one kernel and verify it against the oracle")
    run.add_argument("--kernel", required=True, help="shipped kernel name, .asm listing or binary image")
    run.add_argument("--config", help="key=value configuration file")
    run.add_argument("--contexts", type=int, help="hardware contexts (1, 2, 4 or 8)")
    run.add_argument("--fetch-policy", choices=["icount2.8m", "ideal"])
    run.add_argument("--max-cycles", type=int)
    run.add_argument("--fast-skip", type=int, help="instructions to execute in the oracle first")
    run.add_argument("--strict-lbit-squash", action="store_true", default=None,
                     help="squash on any L-bit hit, even when the value matches")
    run.add_argument("--check-invariants", action="store_true", default=None)
    run.add_argument("--trace", help="write the per-cycle trace to this file")
    run.add_argument("--oracle-trace", help="write the oracle's committed-instruction trace to this file")
    run.add_argument("--set", action="append", metavar="KEY=VALUE", help="any config key, may repeat")
    run.add_argument("--define", action="append", metavar="NAME=VALUE", help="override a kernel .equ")
    run.add_argument("--report", choices=["text", "json", "csv"], default="text")
    run.add_argument("--out", help="write the report here instead of stdout")

    asm = commands.add_parser("asm", help="assemble a listing into a binary image")
    asm.add_argument("source")
    asm.add_argument("-o", "--output", help="image path (default: source with .img suffix)")
    asm.add_argument("--define", action="append", metavar="NAME=VALUE")

    sweep = commands.add_parser("sweep", help="run every line of a sweep file, one CSV row each")
    sweep.add_argument("sweep_file")
    sweep.add_argument("--config", help="key=value file applied under every line")
    sweep.add_argument("--jobs", type=int, default=1, help="worker processes, 0 for all CPUs")
    sweep.add_argument("--out", help="write the CSV here instead of stdout")
    sweep.add_argument("--summary", action="store_true", help="print speedups and geometric means to stderr")
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        file_layer = load_config_file(args.config) if args.config else {}
        flags = {
            "context_count": args.contexts,
            "fetch_policy": args.fetch_policy,
            "max_cycles": args.max_cycles,
            "fast_skip": args.fast_skip,
            "dsmt.strict_lbit_squash": args.strict_lbit_squash,
            "check_invariants": args.check_invariants,
            "trace_path": args.trace,
        }
        config = build_config(file_layer, _pairs(args.set, "--set"), flags)
        defines = {k: int(v, 0) for k, v in _pairs(args.define, "--define").items()}
        name, program = resolve_kernel(args.kernel, defines)
    except LOAD_ERRORS as e:
        logger.error(f"Cannot load: {e}")
        return EXIT_USAGE

    try:
        report = run_experiment(config, program, name, oracle_trace_path=args.oracle_trace)
    except SimulatorError as e:
        logger.error(f"Reference run failed: {e}")
        return EXIT_USAGE

    text = emit_report(report, args.report)
    if args.report == "csv":
        text = csv_header() + "\n" + text
    _write(text, args.out)
    return EXIT_PASS if report.verdict == Verdict.PASS else EXIT_FAILED


def _cmd_asm(args: argparse.Namespace) -> int:
    try:
        defines = {k: int(v, 0) for k, v in _pairs(args.define, "--define").items()}
        program = assemble_file(args.source, defines)
        output = args.output or str(Path(args.source).with_suffix(".img"))
        size = write_image(program, output)
    except LOAD_ERRORS as e:
        logger.error(f"Cannot assemble: {e}")
        return EXIT_USAGE
    print(f"{output}: {len(program.words)} text words, {len(program.data)} data words, {size} bytes")
    return EXIT_PASS


def _cmd_sweep(args: argparse.Namespace) -> int:
    try:
        base = load_config_file(args.config) if args.config else {}
        entries = load_sweep_file(args.sweep_file)
        reports = run_sweep(entries, jobs=args.jobs, base=base)
    except LOAD_ERRORS as e:
        logger.error(f"Sweep failed: {e}")
        return EXIT_USAGE

    rows: List[str] = [csv_header() + "\n"] + [emit_report(report, "csv") for report in reports]
    _write("".join(rows), args.out)
    if args.summary:
        sys.stderr.write(format_summary(summarize(reports)))
    return EXIT_PASS if all(report.passed for report in reports) else EXIT_FAILED


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_PASS
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "asm": _cmd_asm, "sweep": _cmd_sweep}
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
