"""Inter-thread register dependence protocol.

Each register of each context carries R (committed in this iteration),
D (inter-thread dependence observed) and L (read from outside the thread)
bits. A speculative context resolves a live-in register by

  * its own committed or in-flight value when it has one, or the stride
    prediction it was cloned with,
  * level one: for registers whose D anchor is set, waiting for the immediate
    predecessor to commit the register,
  * level two: searching back toward the head for the last thread that
    committed it, falling back to the value copied at clone time.

Every live-in read records the value used; commits of earlier threads compare
against it and request a squash of the first disagreeing reader.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, List, Optional

from .config import DsmtConfig
from .counters import saturating_decrement, saturating_increment
from .events import SquashReason, SquashRequest
from .isa import UNIFIED_REGISTERS, register_name

if TYPE_CHECKING:
    from .tciu import ThreadContext, Tciu

logger = logging.getLogger(__name__)


@dataclass
class RegisterCell:
    value: int = 0
    busy_tag: Optional[int] = None
    r_bit: bool = False
    d_bit: bool = False
    l_bit: bool = False
    read_value: Optional[int] = None
    predicted: bool = False

    def reset_bits(self) -> None:
        self.r_bit = False
        self.d_bit = False
        self.l_bit = False
        self.read_value = None
        self.predicted = False


def new_register_file() -> List[RegisterCell]:
    return [RegisterCell() for _ in range(UNIFIED_REGISTERS)]


class ReadKind(str, Enum):
    OWN_VALUE = "OwnValue"
    OWN_PENDING = "OwnPending"
    FROM_PREDECESSOR = "FromPredecessor"
    STALL = "Stall"


@dataclass(frozen=True)
class ReadResolution:
    kind: ReadKind
    value: Optional[int] = None
    tag: Optional[int] = None
    source: Optional[int] = None


STALL = ReadResolution(ReadKind.STALL)


class ReadConfidenceTable:
    """Per-register 2-bit counters gating speculative cross-thread reads."""

    def __init__(self, size: int = UNIFIED_REGISTERS, initial: int = 2, threshold: int = 2):
        self.counters = [initial] * size
        self.threshold = threshold

    def __getitem__(self, reg: int) -> int:
        return self.counters[reg]

    def confident(self, reg: int) -> bool:
        return self.counters[reg] >= self.threshold

    def reward(self, reg: int) -> None:
        self.counters[reg] = saturating_increment(self.counters[reg])

    def penalize(self, reg: int) -> None:
        self.counters[reg] = saturating_decrement(self.counters[reg])


class RegisterDependenceUnit:
    def __init__(self, tciu: "Tciu", config: DsmtConfig):
        self.tciu = tciu
        self.strict = config.strict_lbit_squash
        self.confidence = ReadConfidenceTable(initial=config.read_confidence_initial)
        self.cross_thread_reads = 0
        self.stalled_reads = 0

    # -- reads --------------------------------------------------------------

    def read_register(self, ctx_id: int, reg: int) -> ReadResolution:
        if reg == 0:
            return ReadResolution(ReadKind.OWN_VALUE, 0)
        cell = self.tciu.contexts[ctx_id].regs[reg]
        if cell.busy_tag is not None:
            return ReadResolution(ReadKind.OWN_PENDING, tag=cell.busy_tag)
        if cell.r_bit:
            return ReadResolution(ReadKind.OWN_VALUE, cell.value)
        return self.resolve_live_in(ctx_id, reg)

    def resolve_live_in(self, ctx_id: int, reg: int) -> ReadResolution:
        """Resolve a register the context has not produced itself.

        Used at dispatch and, for stalled operands, every cycle afterwards; it
        never consults the context's own in-flight producers.
        """
        if reg == 0:
            return ReadResolution(ReadKind.OWN_VALUE, 0)
        ctx = self.tciu.contexts[ctx_id]
        cell = ctx.regs[reg]
        if not ctx.s_bit or cell.l_bit:
            return ReadResolution(ReadKind.OWN_VALUE, cell.value)
        if cell.predicted:
            return self._take(ctx, reg, None, cell.value)

        predecessors = self.tciu.predecessors(ctx_id)
        if not predecessors:
            return self._take(ctx, reg, None, cell.value)
        if not self.confidence.confident(reg) and not predecessors[0].j_bit:
            self.stalled_reads += 1
            return STALL

        level_one = self.tciu.state.d_anchor[reg]
        for depth, source in enumerate(predecessors):
            source_cell = source.regs[reg]
            if depth == 0 and level_one and not source.j_bit:
                if source_cell.r_bit and source_cell.busy_tag is None:
                    return self._take(ctx, reg, source, source_cell.value)
                self.stalled_reads += 1
                return STALL
            if source_cell.r_bit:
                return self._take(ctx, reg, source, source_cell.value)
        return self._take(ctx, reg, None, cell.value)

    def _take(self, ctx: "ThreadContext", reg: int, source: Optional["ThreadContext"],
              value: int) -> ReadResolution:
        cell = ctx.regs[reg]
        cell.l_bit = True
        cell.read_value = value
        cell.value = value
        if source is None:
            return ReadResolution(ReadKind.OWN_VALUE, value)
        if self.tciu.state.r_anchor[reg] and not cell.r_bit:
            cell.d_bit = True
        self.cross_thread_reads += 1
        return ReadResolution(ReadKind.FROM_PREDECESSOR, value, source=source.id)

    # -- commits ------------------------------------------------------------

    def note_commit_reads(self, ctx_id: int, regs) -> None:
        """D-bit rule applied in commit order: a read before any write this iteration."""
        state = self.tciu.state
        cells = self.tciu.contexts[ctx_id].regs
        for reg in regs:
            if reg and not cells[reg].r_bit and state.r_anchor[reg]:
                cells[reg].d_bit = True

    def commit_write(self, ctx_id: int, reg: int, value: int,
                     tag: Optional[int] = None) -> Optional[SquashRequest]:
        if reg == 0:
            return None
        cell = self.tciu.contexts[ctx_id].regs[reg]
        cell.value = value
        cell.r_bit = True
        if tag is not None and cell.busy_tag == tag:
            cell.busy_tag = None
        if not self.tciu.dsmt_active:
            return None

        for depth, successor in enumerate(self.tciu.successors(ctx_id)):
            succ_cell = successor.regs[reg]
            if succ_cell.predicted:
                # a stride prediction only answers for the immediate predecessor
                if depth == 0 and succ_cell.l_bit:
                    return self._check_early_read(successor, reg, value)
                break
            if succ_cell.l_bit:
                return self._check_early_read(successor, reg, value)
            if succ_cell.r_bit:
                break
        return None

    def _check_early_read(self, successor: "ThreadContext", reg: int, value: int) -> Optional[SquashRequest]:
        cell = successor.regs[reg]
        matches = cell.read_value == value
        if cell.predicted:
            if matches:
                return None
            self.tciu.lsst.record_outcome(reg, correct=False)
            cell.predicted = False
            return SquashRequest(successor.id, SquashReason.LSST_MISPREDICT, register_name(reg))
        if matches:
            self.confidence.reward(reg)
        else:
            self.confidence.penalize(reg)
        if matches and not self.strict:
            return None
        return SquashRequest(successor.id, SquashReason.REGISTER_EARLY_READ, register_name(reg))

    def verify_promotion(self, head: "ThreadContext", successor: "ThreadContext") -> Optional[SquashRequest]:
        """Check every recorded live-in of ``successor`` against the head's final values."""
        for reg in range(1, UNIFIED_REGISTERS):
            cell = successor.regs[reg]
            if not cell.l_bit:
                continue
            expected = head.regs[reg].value
            if cell.predicted:
                correct = cell.read_value == expected
                self.tciu.lsst.record_outcome(reg, correct=correct)
                cell.predicted = False
                if not correct:
                    return SquashRequest(successor.id, SquashReason.LSST_MISPREDICT, register_name(reg))
            elif cell.read_value == expected:
                self.confidence.reward(reg)
            else:
                self.confidence.penalize(reg)
                return SquashRequest(successor.id, SquashReason.REGISTER_EARLY_READ, register_name(reg))
        return None
