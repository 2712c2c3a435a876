"""Experiment driver: fast-skip, detailed run, oracle verification, report."""

import contextlib
import logging
import time
from dataclasses import dataclass, field
from multiprocessing import Pool, cpu_count
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from .assembler import assemble_file, read_image
from .config import SimConfig, build_config, flatten_config
from .errors import DeadlockError, RunawayError, TrapError
from .isa import Program, register_name
from .kernels import load_kernel
from .oracle import ArchState, Oracle, StoreRecord
from .processor import DsmtProcessor
from .report import LoopRecord, LsstRecord, SimReport, Verdict

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".img", ".bin")
DEFINE_PREFIX = "define."
MAX_DETAIL_LINES = 20


def resolve_kernel(kernel: Union[str, Path], defines: Optional[Mapping[str, int]] = None) -> Tuple[str, Program]:
    """Load a kernel given as an ``.asm``/image path or as the name of a shipped kernel.

    Raises:
        FileNotFoundError: if it is neither
        AssemblyError: if the listing does not assemble
    """
    path = Path(kernel)
    if path.suffix in IMAGE_SUFFIXES and path.is_file():
        return path.stem, read_image(path)
    if path.suffix == ".asm" or path.is_file():
        if not path.is_file():
            raise FileNotFoundError(f"kernel file not found: {path}")
        return path.stem, assemble_file(path, defines)
    return str(kernel), load_kernel(str(kernel), defines)


def _compare_traces(expected: Sequence[StoreRecord], actual: Sequence[StoreRecord]) -> List[str]:
    if list(expected) == list(actual):
        return []
    for index, (want, got) in enumerate(zip(expected, actual)):
        if want != got:
            return [f"store #{index}: expected mem[0x{want.address:08x}]={want.value}, "
                    f"got mem[0x{got.address:08x}]={got.value}"]
    return [f"store trace length: expected {len(expected)}, got {len(actual)}"]


def _verify(expected: ArchState, expected_trace: List[StoreRecord], actual: ArchState,
            actual_trace: List[StoreRecord]) -> List[str]:
    problems = [str(m) for m in Oracle.diff(expected, actual)]
    problems += _compare_traces(expected_trace, actual_trace)
    if expected.committed_count != actual.committed_count:
        problems.append(f"committed count: expected {expected.committed_count}, got {actual.committed_count}")
    return problems


def _build_report(kernel: str, config: SimConfig, processor: DsmtProcessor, verdict: Verdict,
                  detail: List[str], skipped: int, oracle_committed: int) -> SimReport:
    tciu = processor.tciu
    pipeline = processor.pipeline
    detector = processor.detector
    cycles = processor.cycle
    committed = processor.committed
    committed_dsmt = processor.committed_dsmt
    branches = pipeline.branches_committed

    loops = [
        LoopRecord(
            loop=entry.describe(),
            branch_addr=entry.branch_addr,
            target_addr=entry.target_addr,
            quality=entry.quality.value,
            sipc=entry.sipc_history,
            pre_dsmt_ipc=entry.pre_dsmt_ipc,
            run_length=entry.run_length,
            episodes=entry.episodes,
            iterations=entry.total_iterations,
            discarded=entry.discarded,
            selected=entry is detector.selected,
        )
        for entry in detector.loops()
    ]
    lsst = [
        LsstRecord(reg=register_name(reg), stride=entry.stride, base=entry.base, confidence=entry.confidence)
        for reg, entry in sorted(tciu.lsst.entries.items())
    ]
    if len(detail) > MAX_DETAIL_LINES:
        detail = detail[:MAX_DETAIL_LINES] + [f"... {len(detail) - MAX_DETAIL_LINES} more"]

    return SimReport(
        kernel=kernel,
        verdict=verdict,
        verdict_detail=detail,
        context_count=config.context_count,
        fetch_policy=config.fetch_policy,
        strict_lbit_squash=config.dsmt.strict_lbit_squash,
        config=dict(flatten_config(config)),
        fast_skipped=skipped,
        oracle_committed=oracle_committed,
        cycles=cycles,
        committed=committed,
        committed_dsmt=committed_dsmt,
        dsmt_fraction=committed_dsmt / committed if committed else 0.0,
        ipc=committed / cycles if cycles else 0.0,
        clones=tciu.clones,
        promotions=tciu.promotions,
        squashes={reason.value: count for reason, count in tciu.squashes.items()},
        exits={reason.value: count for reason, count in tciu.exits.items()},
        lsst_predictions=tciu.lsst.predictions,
        lsst_accuracy=tciu.lsst.accuracy,
        lsst=lsst,
        branches=branches,
        mispredictions=pipeline.mispredictions,
        misprediction_rate=pipeline.mispredictions / branches if branches else 0.0,
        port_histogram=[int(n) for n in processor.cache.port_histogram],
        port_utilization=processor.cache.port_utilization(),
        mdrt_peak=processor.memory.mdrt.peak_occupancy,
        mdrt_stall_cycles=processor.memory.mdrt.full_stalls,
        sync_wait_cycles=processor.sync_wait_cycles,
        loops=loops,
        selected_loop=detector.selected.describe() if detector.selected is not None else None,
    )


def run_experiment(config: SimConfig, program: Program, kernel: str = "program",
                   oracle_trace_path: Optional[str] = None) -> SimReport:
    """Run one configuration of one program and check it against the oracle.

    The oracle first runs the whole program to get the reference state; a
    second oracle instance fast-skips ``config.fast_skip`` instructions to
    seed the detailed simulation. With ``oracle_trace_path`` the reference run
    also dumps one line per committed instruction.

    Raises:
        FuelExhaustedError: if the program does not halt within ``oracle_fuel``
        TrapError: if the program itself traps
    """
    started = time.time()
    logger.info(f"Running {kernel} with {config.context_count} contexts ({config.fetch_policy})")

    with contextlib.ExitStack() as stack:
        oracle_trace = stack.enter_context(open(oracle_trace_path, "w")) if oracle_trace_path else None
        expected, expected_trace = Oracle(program, oracle_trace).run(config.oracle_fuel)

    skipper = Oracle(program)
    state = skipper.initial_state()
    skip = min(config.fast_skip, expected.committed_count - 1)
    if skip < config.fast_skip:
        logger.warning(f"Fast-skip clamped to {skip}: the program halts after {expected.committed_count}")
    skipped = skipper.advance(state, skip)
    skip_trace = list(skipper.store_trace)

    with contextlib.ExitStack() as stack:
        trace_file = None
        if config.trace_path:
            trace_file = stack.enter_context(open(config.trace_path, "w"))
        processor = DsmtProcessor(program, config, state, trace_file)
        try:
            result = processor.run()
        except (DeadlockError, RunawayError, TrapError) as exc:
            logger.error(f"Detailed simulation of {kernel} failed: {exc}")
            report = _build_report(kernel, config, processor, Verdict.FAILED, [str(exc)],
                                   skipped, expected.committed_count)
            report.elapsed_seconds = time.time() - started
            return report

    if not result.halted:
        verdict, detail = Verdict.INCOMPLETE, [f"max_cycles ({config.max_cycles}) exhausted before halt"]
    else:
        detail = _verify(expected, expected_trace, result.state, skip_trace + result.store_trace)
        verdict = Verdict.FAILED if detail else Verdict.PASS

    report = _build_report(kernel, config, processor, verdict, detail, skipped, expected.committed_count)
    elapsed = time.time() - started
    report.elapsed_seconds = elapsed
    logger.info(
        f"{kernel}: {verdict.value}, {report.committed} instructions in {report.cycles} cycles "
        f"(IPC {report.ipc:.3f}, {report.dsmt_fraction:.1%} in DSMT) in {elapsed:.3f}s"
    )
    return report


# -- sweeps -----------------------------------------------------------------

@dataclass
class SweepEntry:
    """One line of a sweep file."""
    kernel: str
    settings: Dict[str, Any] = field(default_factory=dict)
    defines: Dict[str, int] = field(default_factory=dict)


def parse_sweep_text(text: str) -> List[SweepEntry]:
    """Parse whitespace-separated ``key=value`` runs, one per line.

    ``kernel`` is required; ``define.NAME=value`` resizes the kernel through
    its ``.equ`` constants; every other key is a config setting.
    """
    entries = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kernel = None
        settings: Dict[str, Any] = {}
        defines: Dict[str, int] = {}
        for token in line.split():
            key, sep, value = token.partition("=")
            if not sep or not key:
                raise ValueError(f"sweep line {line_no}: expected key=value, got '{token}'")
            if key == "kernel":
                kernel = value
            elif key.startswith(DEFINE_PREFIX):
                defines[key[len(DEFINE_PREFIX):]] = int(value, 0)
            else:
                settings[key] = value
        if kernel is None:
            raise ValueError(f"sweep line {line_no}: missing kernel=")
        entries.append(SweepEntry(kernel, settings, defines))
    return entries


def load_sweep_file(path: Union[str, Path]) -> List[SweepEntry]:
    return parse_sweep_text(Path(path).read_text())


def run_entry(entry: SweepEntry, base: Optional[Mapping[str, Any]] = None) -> SimReport:
    config = build_config(base, entry.settings)
    name, program = resolve_kernel(entry.kernel, entry.defines)
    return run_experiment(config, program, name)


def _run_entry_args(args: Tuple[SweepEntry, Optional[Mapping[str, Any]]]) -> SimReport:
    return run_entry(*args)


def run_sweep(entries: Sequence[SweepEntry], jobs: int = 1,
              base: Optional[Mapping[str, Any]] = None) -> List[SimReport]:
    """Run every entry; reports come back in entry order.

    Args:
        entries: Parsed sweep lines
        jobs: Worker processes; 0 uses every CPU, 1 runs in this process
        base: Settings applied under each entry's own settings
    """
    work = [(entry, base) for entry in entries]
    if jobs == 0:
        jobs = cpu_count()
    if jobs <= 1 or len(work) <= 1:
        return [_run_entry_args(item) for item in work]
    logger.info(f"Running {len(work)} configurations on {jobs} workers")
    with Pool(processes=min(jobs, len(work))) as pool:
        return pool.map(_run_entry_args, work)
