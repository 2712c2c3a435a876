"""Detailed DSMT processor: the global clock around the pipeline, TCIU and loop detector."""

import logging
from dataclasses import dataclass
from typing import List, Optional, TextIO

from .branch_predictor import BranchTargetBuffer
from .caches import CacheModel
from .config import SimConfig
from .errors import DeadlockError
from .events import ExitReason, ModeEventKind
from .isa import FP_BASE, REGISTER_COUNT, Program
from .loop_detector import LoopDetector, LoopQuality
from .memory import MemorySystem
from .oracle import ArchState, StoreRecord
from .pipeline import Pipeline
from .tciu import DsmtMode, Tciu

logger = logging.getLogger(__name__)


@dataclass
class ProcessorResult:
    state: ArchState
    store_trace: List[StoreRecord]
    cycles: int
    committed: int
    committed_dsmt: int
    halted: bool


class DsmtProcessor:
    """Runs a program cycle by cycle from an architectural starting state.

    Args:
        program: Loaded program image
        config: Machine configuration
        state: Starting state (e.g. after fast-skip); defaults to the program's initial state
        trace_file: Optional sink for the per-cycle debug trace
    """

    def __init__(self, program: Program, config: SimConfig, state: Optional[ArchState] = None,
                 trace_file: Optional[TextIO] = None):
        if state is None:
            state = ArchState(pc=program.base_address, memory=dict(program.data))
        self.program = program
        self.config = config
        self.start_committed = state.committed_count

        self.cache = CacheModel(config.cache)
        self.btb = BranchTargetBuffer(config.pipeline.btb_entries, config.pipeline.btb_ways)
        self.memory = MemorySystem(
            dict(state.memory), self.cache, config.context_count,
            lsq_size=config.pipeline.lsq_size,
            mdrt_entries=config.dsmt.mdrt_entries,
            strict_lbit_squash=config.dsmt.strict_lbit_squash,
        )
        self.tciu = Tciu(config.context_count, config.dsmt, self.memory)
        self.detector = LoopDetector(config.dsmt, config.context_count)
        self.pipeline = Pipeline(program, config, self.tciu, self.memory, self.cache, self.btb,
                                 observer=self, trace_file=trace_file)

        head = self.tciu.head
        head.load_values(list(state.int_regs) + list(state.fp_regs))
        head.regs[0].value = 0
        self.pipeline.start(state.pc)
        self.sync_wait_cycles = 0

    @property
    def cycle(self) -> int:
        return self.pipeline.cycle

    @property
    def committed(self) -> int:
        return self.pipeline.head_commits + self.tciu.promoted_commits

    @property
    def committed_dsmt(self) -> int:
        return self.pipeline.dsmt_commits + self.tciu.promoted_commits

    # -- loop detection -----------------------------------------------------

    def head_control_committed(self, pc: int, target: int, taken: bool) -> None:
        if not self.config.dsmt_enabled:
            return
        event = self.detector.observe_branch(pc, target, taken)
        if event is None or event.kind != ModeEventKind.ENTER_PRE_DSMT:
            return
        if self.tciu.mode != DsmtMode.NON_DSMT:
            return
        entry = self.detector.entry(pc)
        if self.tciu.enter_pre_dsmt(target, pc, bad=entry.quality == LoopQuality.BAD):
            self.detector.start_episode(entry, self.cycle, self.committed)

    def _track_mode(self, before: DsmtMode) -> None:
        after = self.tciu.mode
        now = self.cycle
        iterations = self.tciu.iterations_completed
        if before != DsmtMode.FULL_DSMT and after == DsmtMode.FULL_DSMT:
            self.detector.full_dsmt_started(now, self.committed, iterations, self.tciu.pre_iterations)
            self.pipeline.trim_to_iteration(self.tciu.state.head)
        elif before != DsmtMode.NON_DSMT and after == DsmtMode.NON_DSMT:
            self.detector.end_episode(now, self.committed, iterations)
            return

        if after != DsmtMode.FULL_DSMT:
            return
        if self.detector.window_expired(now, iterations):
            self.detector.finish_measurement(now, self.committed, iterations)
        if self.detector.should_abandon():
            self.tciu.exit_dsmt(ExitReason.CLASSIFIED_BAD)
            self.detector.end_episode(now, self.committed, iterations)

    # -- clock --------------------------------------------------------------

    def step(self) -> None:
        """Advance one cycle."""
        before = self.tciu.mode
        self.pipeline.run_stages()
        if self.pipeline.halted:
            return
        self.tciu.end_of_cycle()
        self._track_mode(before)
        self.sync_wait_cycles += sum(1 for ctx in self.tciu.order() if ctx.s_bit and ctx.j_bit)
        if self.config.check_invariants:
            self.pipeline.check_invariants()
            self.tciu.check_invariants()
        idle = self.cycle - self.pipeline.last_commit_cycle
        if idle > self.config.deadlock_cycles:
            raise DeadlockError(self.cycle, idle)
        self.pipeline.cycle += 1

    def run(self, max_cycles: Optional[int] = None) -> ProcessorResult:
        limit = max_cycles if max_cycles is not None else self.config.max_cycles
        while not self.pipeline.halted and self.pipeline.cycle < limit:
            self.step()
        if self.pipeline.halted:
            self.pipeline.cycle += 1
            if self.tciu.mode != DsmtMode.NON_DSMT:
                self.detector.end_episode(self.cycle, self.committed, self.tciu.iterations_completed)
        else:
            logger.warning(f"Stopped after {self.cycle} cycles without reaching halt")
        return ProcessorResult(
            state=self.arch_state(),
            store_trace=list(self.memory.store_trace),
            cycles=self.cycle,
            committed=self.committed,
            committed_dsmt=self.committed_dsmt,
            halted=self.pipeline.halted,
        )

    def arch_state(self) -> ArchState:
        """Architectural state owned by the non-speculative context."""
        head = self.tciu.head
        values = head.values()
        return ArchState(
            pc=self.pipeline.contexts[head.id].committed_pc,
            int_regs=[0] + values[1:REGISTER_COUNT],
            fp_regs=values[FP_BASE:FP_BASE + REGISTER_COUNT],
            memory=dict(self.memory.memory),
            halted=self.pipeline.halted,
            committed_count=self.start_committed + self.committed,
        )
