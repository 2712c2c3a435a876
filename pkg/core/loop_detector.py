"""Loop detection, break-even classification and nest selection.

A loop is recognised from a taken backward branch seen twice. The opening
stretch of its first full-DSMT episode is measured, up to a number of
iterations, a number of cycles or the loop exit: the sustained IPC (SIPC) is
compared with the sequential IPC observed during pre-DSMT, and the loop is
labelled Good or Bad. A Bad loop leaves DSMT at once and never enters again. When loops nest, the
level with the best SIPC is kept and the others are discarded.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, NamedTuple, Optional

from .config import DsmtConfig
from .events import ModeEvent, ModeEventKind

logger = logging.getLogger(__name__)


class LoopQuality(str, Enum):
    UNKNOWN = "Unknown"
    GOOD = "Good"
    BAD = "Bad"


@dataclass
class LoopTableEntry:
    branch_addr: int
    target_addr: int
    loop_flag: bool = False
    iter_count: int = 0
    quality: LoopQuality = LoopQuality.UNKNOWN
    sipc_history: Optional[float] = None
    pre_dsmt_ipc: Optional[float] = None
    run_length: float = 0.0
    total_iterations: int = 0
    episodes: int = 0
    discarded: bool = False

    @property
    def measured(self) -> bool:
        return self.sipc_history is not None

    def contains(self, other: "LoopTableEntry") -> bool:
        return self.target_addr <= other.target_addr and other.branch_addr <= self.branch_addr

    def describe(self) -> str:
        return f"0x{self.target_addr:08x}-0x{self.branch_addr:08x}"


class SipcWindow(NamedTuple):
    committed: int
    cycles: int
    iterations: int


def compute_sipc(window: SipcWindow, run_length: float, contexts_available: int,
                 min_run_length: int = 4) -> float:
    """Gated IPC of a full-DSMT window.

    The ratio is forced to zero when the loop ran fewer iterations than there
    are contexts or when its iterations are too short to pay for cloning.

    Raises:
        ValueError: if the window covers no cycles
    """
    if window.cycles <= 0:
        raise ValueError("SIPC window must cover at least one cycle")
    if window.iterations < contexts_available or run_length < min_run_length:
        return 0.0
    return window.committed / window.cycles


def classify(entry: LoopTableEntry) -> LoopQuality:
    """Break-even rule: Good when DSMT did at least as well as sequential execution."""
    if entry.sipc_history is None or entry.pre_dsmt_ipc is None:
        raise ValueError(f"loop {entry.describe()} has not been measured")
    entry.quality = LoopQuality.GOOD if entry.sipc_history >= entry.pre_dsmt_ipc else LoopQuality.BAD
    return entry.quality


@dataclass
class Episode:
    """Bookkeeping for one pass of a loop through pre-DSMT and full DSMT."""
    entry: LoopTableEntry
    start_cycle: int
    start_committed: int
    full_start_cycle: Optional[int] = None
    full_start_committed: int = 0
    full_start_iterations: int = 0
    measure: bool = False


class LoopDetector:
    def __init__(self, config: DsmtConfig, contexts: int):
        self.config = config
        self.contexts = contexts
        self.table: Dict[int, LoopTableEntry] = {}
        self.stack: List[LoopTableEntry] = []
        self.episode: Optional[Episode] = None
        self.selected: Optional[LoopTableEntry] = None

    def entry(self, branch_addr: int) -> Optional[LoopTableEntry]:
        return self.table.get(branch_addr)

    def loops(self) -> List[LoopTableEntry]:
        return [self.table[addr] for addr in sorted(self.table)]

    def observe_branch(self, pc: int, target: int, taken: bool) -> Optional[ModeEvent]:
        entry = self.table.get(pc)
        if not taken:
            if entry is not None and entry.loop_flag:
                entry.iter_count = 0
                return ModeEvent(ModeEventKind.LOOP_EXIT, entry.branch_addr, entry.target_addr)
            return None
        if target >= pc:
            return None

        if entry is None or entry.target_addr != target:
            self.table[pc] = LoopTableEntry(pc, target, iter_count=1)
            return None
        entry.iter_count += 1
        entry.total_iterations += 1
        entry.loop_flag = True
        if entry.quality == LoopQuality.BAD or entry.discarded:
            return None
        return ModeEvent(ModeEventKind.ENTER_PRE_DSMT, pc, target)

    # -- nesting ------------------------------------------------------------

    def nest_select(self, new_loop: Optional[LoopTableEntry] = None) -> Optional[LoopTableEntry]:
        """Track a newly active loop on the stack, or pick the best level of the nest.

        With ``new_loop`` the stack is updated (push when it encloses the top,
        reset when it is unrelated) and the top is returned. Without it the
        level with the highest SIPC wins, the inner one on ties, and every
        other level is discarded.
        """
        if new_loop is not None:
            if not self.stack:
                self.stack.append(new_loop)
            else:
                top = self.stack[-1]
                if new_loop is top or top.contains(new_loop):
                    pass
                elif new_loop.contains(top):
                    self.stack.append(new_loop)
                else:
                    self.stack = [new_loop]
            return self.stack[-1]

        if not self.stack:
            return None

        def rank(entry: LoopTableEntry) -> float:
            if entry.quality == LoopQuality.BAD or entry.sipc_history is None:
                return -1.0
            return entry.sipc_history

        chosen = self.stack[0]
        for candidate in self.stack[1:]:
            if rank(candidate) > rank(chosen):
                chosen = candidate
        for entry in self.stack:
            if entry is not chosen:
                entry.discarded = True
        self.stack = [chosen]
        self.selected = chosen
        logger.info(f"Selected loop {chosen.describe()} from nest (SIPC {rank(chosen):.3f})")
        return chosen

    # -- measurement --------------------------------------------------------

    def start_episode(self, entry: LoopTableEntry, cycle: int, committed: int) -> None:
        entry.episodes += 1
        self.nest_select(entry)
        self.episode = Episode(entry, cycle, committed, measure=not entry.measured)

    def full_dsmt_started(self, cycle: int, committed: int, iterations: int, pre_iterations: int) -> None:
        episode = self.episode
        if episode is None:
            return
        entry = episode.entry
        cycles = max(1, cycle - episode.start_cycle)
        pre_committed = committed - episode.start_committed
        if episode.measure:
            entry.pre_dsmt_ipc = pre_committed / cycles
            entry.run_length = pre_committed / max(1, pre_iterations)
        episode.full_start_cycle = cycle
        episode.full_start_committed = committed
        episode.full_start_iterations = iterations

    def window_expired(self, cycle: int, iterations: int) -> bool:
        """True once the open window has seen enough full-DSMT iterations or cycles."""
        episode = self.episode
        if episode is None or not episode.measure or episode.full_start_cycle is None:
            return False
        return (iterations - episode.full_start_iterations >= self.config.window_iterations
                or cycle - episode.full_start_cycle >= self.config.window_cycles)

    def finish_measurement(self, cycle: int, committed: int, iterations: int) -> Optional[LoopTableEntry]:
        """Close the measurement window of the current episode, if one is open.

        Returns the measured entry, or None when nothing was measured.
        """
        episode = self.episode
        if episode is None or not episode.measure or episode.full_start_cycle is None:
            return None
        episode.measure = False
        entry = episode.entry
        window = SipcWindow(committed - episode.full_start_committed,
                            max(1, cycle - episode.full_start_cycle),
                            iterations - episode.full_start_iterations)
        entry.sipc_history = compute_sipc(window, entry.run_length, self.contexts,
                                          self.config.min_run_length)
        quality = classify(entry)
        logger.info(
            f"Loop {entry.describe()} classified {quality.value}: "
            f"SIPC {entry.sipc_history:.3f} vs pre-DSMT IPC {entry.pre_dsmt_ipc:.3f}"
        )
        if len(self.stack) >= 2:
            self.nest_select()
        return entry

    def end_episode(self, cycle: int, committed: int, iterations: int) -> None:
        self.finish_measurement(cycle, committed, iterations)
        self.episode = None

    @property
    def active_entry(self) -> Optional[LoopTableEntry]:
        return self.episode.entry if self.episode is not None else None

    def should_abandon(self) -> bool:
        """True when the loop running in DSMT has lost its place (Bad or discarded)."""
        entry = self.active_entry
        return entry is not None and (entry.quality == LoopQuality.BAD or entry.discarded)
