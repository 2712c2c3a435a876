"""Thread Creation and Initiation Unit.

Owns the ring of hardware contexts, the DSMT mode, the continuation register,
the anchor bits and the loop stride speculation table (LSST). Everything here
is mutated at commit boundaries: the pipeline reports completed iterations,
control transfers and squash requests while it commits, and ``end_of_cycle``
applies the queued requests, promotes the successor of a finished head and
re-clones freed slots.

Ring layout: valid contexts always form one contiguous run starting at
``state.head``; ``state.tail`` is the last of them.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

from .config import DsmtConfig
from .counters import COUNTER_MAX, COUNTER_MIN, saturating_decrement, saturating_increment
from .errors import ProtocolError
from .events import ExitReason, SquashReason, SquashRequest
from .isa import UNIFIED_REGISTERS, Instruction, to_int32
from .memory import MemorySystem
from .regdep import RegisterCell, RegisterDependenceUnit, new_register_file

logger = logging.getLogger(__name__)


class DsmtMode(str, Enum):
    NON_DSMT = "NonDsmt"
    PRE_DSMT = "PreDsmt"
    FULL_DSMT = "FullDsmt"


@dataclass(eq=False)
class ThreadContext:
    id: int
    pc: int = 0
    regs: List[RegisterCell] = field(default_factory=new_register_file)
    v_bit: bool = False
    s_bit: bool = False
    j_bit: bool = False
    iteration: int = 0
    parked: bool = False
    local_committed: int = 0
    memory_reads: List[Tuple[int, int]] = field(default_factory=list)

    def reset_bits(self) -> None:
        for cell in self.regs:
            cell.reset_bits()

    def values(self) -> List[int]:
        return [cell.value for cell in self.regs]

    def load_values(self, values: Sequence[int]) -> None:
        for cell, value in zip(self.regs, values):
            cell.value = value
            cell.busy_tag = None


@dataclass
class TciuState:
    continuation: int = 0
    m_bit: bool = False
    head: int = 0
    tail: int = 0
    d_anchor: List[bool] = field(default_factory=lambda: [False] * UNIFIED_REGISTERS)
    r_anchor: List[bool] = field(default_factory=lambda: [False] * UNIFIED_REGISTERS)
    mode: DsmtMode = DsmtMode.NON_DSMT
    loop_branch: Optional[int] = None

    def reset_anchors(self) -> None:
        self.d_anchor = [False] * UNIFIED_REGISTERS
        self.r_anchor = [False] * UNIFIED_REGISTERS

    def latch_anchors(self, ctx: ThreadContext) -> None:
        self.d_anchor = [cell.d_bit for cell in ctx.regs]
        self.r_anchor = [cell.r_bit for cell in ctx.regs]


@dataclass
class LsstEntry:
    reg: int
    stride: int
    base: int = 0
    confidence: int = 1

    def __post_init__(self):
        if not COUNTER_MIN <= self.confidence <= COUNTER_MAX:
            raise ValueError(f"confidence {self.confidence} out of range")

    def predict(self, iteration: int) -> int:
        return to_int32(self.base + iteration * self.stride)


class LoopStrideTable:
    """Stride records for ``addi rd,rd,#imm`` induction updates.

    Confidence follows how often the same immediate repeats in the committed
    stream. Predictions are ``base + iteration * stride`` from the bases
    latched when full DSMT starts; their outcomes only feed the accuracy count.
    """

    def __init__(self, threshold: int = 2, initial_confidence: int = 1):
        self.threshold = threshold
        self.initial_confidence = initial_confidence
        self.entries: Dict[int, LsstEntry] = {}
        self.predictions = 0
        self.correct = 0

    def clear(self) -> None:
        self.entries.clear()

    def observe(self, inst: Instruction) -> None:
        if not inst.is_stride_update:
            return
        reg, stride = inst.rt, inst.imm
        entry = self.entries.get(reg)
        if entry is None:
            self.entries[reg] = LsstEntry(reg, stride, confidence=self.initial_confidence)
        elif entry.stride == stride:
            entry.confidence = saturating_increment(entry.confidence)
        else:
            entry.stride = stride
            entry.confidence = saturating_decrement(entry.confidence)

    def snapshot_bases(self, values: Sequence[int]) -> None:
        for reg, entry in self.entries.items():
            entry.base = values[reg]

    def predict(self, reg: int, iteration: int) -> Optional[int]:
        entry = self.entries.get(reg)
        if entry is None or entry.confidence < self.threshold:
            return None
        return entry.predict(iteration)

    def record_outcome(self, reg: int, correct: bool) -> None:
        self.predictions += 1
        if correct:
            self.correct += 1

    @property
    def accuracy(self) -> float:
        return self.correct / self.predictions if self.predictions else 0.0


class TciuHooks(Protocol):
    """Pipeline-side effects of thread-control decisions."""

    def context_discarded(self, ctx_id: int) -> None: ...

    def context_cloned(self, ctx_id: int, pc: int) -> None: ...

    def context_continued(self, ctx_id: int, pc: int) -> None: ...

    def context_released(self, ctx_id: int) -> None: ...


class _NoHooks:
    def context_discarded(self, ctx_id: int) -> None:
        pass

    def context_cloned(self, ctx_id: int, pc: int) -> None:
        pass

    def context_continued(self, ctx_id: int, pc: int) -> None:
        pass

    def context_released(self, ctx_id: int) -> None:
        pass


class Tciu:
    def __init__(self, context_count: int, config: DsmtConfig, memory: MemorySystem,
                 hooks: Optional[TciuHooks] = None):
        self.config = config
        self.memory = memory
        self.hooks: TciuHooks = hooks or _NoHooks()
        self.contexts = [ThreadContext(i) for i in range(context_count)]
        self.state = TciuState()
        self.lsst = LoopStrideTable(config.lsst_threshold, config.lsst_initial_confidence)
        self.regdep = RegisterDependenceUnit(self, config)
        memory.attach(self)

        self.contexts[0].v_bit = True
        self.pre_iterations = 0
        self.iterations_completed = 0
        self.promoted_commits = 0
        self.clones = 0
        self.promotions = 0
        self.squashes: Dict[SquashReason, int] = {reason: 0 for reason in SquashReason}
        self.exits: Dict[ExitReason, int] = {reason: 0 for reason in ExitReason}
        self._pending_squashes: List[SquashRequest] = []
        self._pending_exit: Optional[ExitReason] = None
        self._start_full = False

    # -- ring ---------------------------------------------------------------

    @property
    def mode(self) -> DsmtMode:
        return self.state.mode

    @property
    def dsmt_active(self) -> bool:
        return self.state.mode != DsmtMode.NON_DSMT

    @property
    def full_dsmt_pending(self) -> bool:
        """Pre-DSMT has run its iterations; full DSMT starts at the end of this cycle."""
        return self._start_full

    @property
    def head(self) -> ThreadContext:
        return self.contexts[self.state.head]

    def _next(self, ctx_id: int) -> int:
        return (ctx_id + 1) % len(self.contexts)

    def _prev(self, ctx_id: int) -> int:
        return (ctx_id - 1) % len(self.contexts)

    def order(self) -> List[ThreadContext]:
        """Valid contexts from head to tail."""
        result = []
        ctx_id = self.state.head
        for _ in range(len(self.contexts)):
            ctx = self.contexts[ctx_id]
            if not ctx.v_bit:
                break
            result.append(ctx)
            if ctx_id == self.state.tail:
                break
            ctx_id = self._next(ctx_id)
        return result

    def position(self, ctx_id: int) -> int:
        return (ctx_id - self.state.head) % len(self.contexts)

    def predecessors(self, ctx_id: int) -> List[ThreadContext]:
        """Valid contexts older than ``ctx_id``, nearest first, ending with the head."""
        ring = self.order()
        index = next((i for i, ctx in enumerate(ring) if ctx.id == ctx_id), None)
        if index is None:
            return []
        return list(reversed(ring[:index]))

    def successors(self, ctx_id: int) -> List[ThreadContext]:
        ring = self.order()
        index = next((i for i, ctx in enumerate(ring) if ctx.id == ctx_id), None)
        if index is None:
            return []
        return ring[index + 1:]

    # -- mode transitions ---------------------------------------------------

    def enter_pre_dsmt(self, target: int, branch_addr: int, bad: bool = False) -> bool:
        """Latch ``target`` as the continuation and start observing the loop.

        Returns False, leaving the mode unchanged, when the loop is known to be bad.

        Raises:
            ProtocolError: if DSMT is already active
        """
        if self.state.mode != DsmtMode.NON_DSMT:
            raise ProtocolError(f"cannot enter pre-DSMT from {self.state.mode.value}")
        if bad:
            return False
        self.state.continuation = target
        self.state.loop_branch = branch_addr
        self.state.m_bit = True
        self.state.mode = DsmtMode.PRE_DSMT
        self.state.reset_anchors()
        self.lsst.clear()
        self.head.reset_bits()
        self.pre_iterations = 0
        logger.info(f"Entering pre-DSMT for loop 0x{target:08x}-0x{branch_addr:08x}")
        return True

    def lsst_observe(self, inst: Instruction) -> None:
        if self.state.mode != DsmtMode.NON_DSMT:
            self.lsst.observe(inst)

    def lsst_predict(self, reg: int, iteration: int) -> Optional[int]:
        return self.lsst.predict(reg, iteration)

    def _switch_to_full(self) -> None:
        self.state.mode = DsmtMode.FULL_DSMT
        self.state.m_bit = False
        self.state.tail = self.state.head
        self.lsst.snapshot_bases(self.head.values())
        self.head.iteration = 0
        logger.info(f"Full DSMT on loop 0x{self.state.continuation:08x}, "
                    f"{len(self.lsst.entries)} stride entries")

    def begin_full_dsmt_and_clone(self, slot: int, iteration: int) -> Optional[ThreadContext]:
        """Clone the head's state into ``slot`` as iteration ``iteration``.

        The first call of an episode switches PreDsmt to FullDsmt. Returns None
        when the slot is occupied.
        """
        if self.state.mode == DsmtMode.PRE_DSMT:
            self._switch_to_full()
        elif self.state.mode != DsmtMode.FULL_DSMT:
            raise ProtocolError("cloning outside DSMT")

        ctx = self.contexts[slot]
        if ctx.v_bit:
            return None
        ctx.load_values(self.head.values())
        ctx.reset_bits()
        ctx.memory_reads.clear()
        for reg in range(1, UNIFIED_REGISTERS):
            predicted = self.lsst.predict(reg, iteration)
            if predicted is None:
                continue
            # taken as a live-in, and checked, only once the iteration reads it
            cell = ctx.regs[reg]
            cell.value = predicted
            cell.predicted = True
        ctx.v_bit = True
        ctx.s_bit = True
        ctx.j_bit = False
        ctx.parked = False
        ctx.iteration = iteration
        ctx.local_committed = 0
        ctx.pc = self.state.continuation
        self.state.tail = slot
        self.clones += 1
        self.hooks.context_cloned(slot, ctx.pc)
        return ctx

    def fill_free_slots(self) -> int:
        if self.state.mode != DsmtMode.FULL_DSMT:
            return 0
        cloned = 0
        while True:
            tail = self.contexts[self.state.tail]
            slot = self._next(self.state.tail)
            if slot == self.state.head or tail.parked or self.contexts[slot].v_bit:
                return cloned
            self.begin_full_dsmt_and_clone(slot, tail.iteration + 1)
            cloned += 1

    def exit_dsmt(self, reason: ExitReason) -> None:
        if self.state.mode == DsmtMode.NON_DSMT:
            raise ProtocolError("exit requested outside DSMT")
        head = self.head
        speculative = self.successors(head.id)
        for ctx in speculative:
            self._discard(ctx)
        if speculative:
            self.squashes[SquashReason.CONTROL_MISPECULATION] += 1
        self.state.tail = head.id
        self.state.mode = DsmtMode.NON_DSMT
        self.state.m_bit = False
        self.state.loop_branch = None
        self.memory.clear_mdrt()
        head.reset_bits()
        head.j_bit = False
        head.parked = False
        self.memory.release_loads(head)
        self._pending_squashes.clear()
        self._pending_exit = None
        self._start_full = False
        self.exits[reason] += 1
        self.hooks.context_released(head.id)
        logger.info(f"Leaving DSMT ({reason.value}), {len(speculative)} speculative contexts discarded")

    # -- iteration events ---------------------------------------------------

    def complete_iteration(self, ctx_id: int) -> None:
        """The context committed a taken loop-closing branch."""
        ctx = self.contexts[ctx_id]
        if self.state.mode == DsmtMode.PRE_DSMT:
            if ctx_id != self.state.head:
                raise ProtocolError("speculative context active in pre-DSMT")
            self.state.latch_anchors(ctx)
            ctx.reset_bits()
            self.pre_iterations += 1
            self.iterations_completed += 1
            if self.pre_iterations >= self.config.pre_dsmt_iterations:
                self._start_full = True
            return
        if self.state.mode == DsmtMode.FULL_DSMT:
            ctx.j_bit = True

    def note_control_transfer(self, ctx_id: int, next_pc: int) -> bool:
        """Apply the loop-exit rule to a committed control transfer.

        Returns True when a speculative context has to park.
        """
        if self.state.mode == DsmtMode.NON_DSMT:
            return False
        if self.state.continuation <= next_pc <= self.state.loop_branch:
            return False
        if ctx_id == self.state.head:
            self._pending_exit = ExitReason.LOOP_EXIT
            return False
        ctx = self.contexts[ctx_id]
        ctx.parked = True
        following = self.successors(ctx_id)
        if following:
            self.request_squash(SquashRequest(following[0].id, SquashReason.CONTROL_MISPECULATION))
        logger.debug(f"Context {ctx_id} parked on loop exit to 0x{next_pc:08x}")
        return True

    def request_squash(self, request: Optional[SquashRequest]) -> None:
        if request is not None:
            self._pending_squashes.append(request)

    def request_exit(self, reason: ExitReason) -> None:
        self._pending_exit = reason

    def can_commit(self, ctx_id: int) -> bool:
        ctx = self.contexts[ctx_id]
        return ctx.v_bit and not ctx.j_bit and not (ctx.parked and ctx.s_bit)

    # -- squash and promotion -----------------------------------------------

    def _discard(self, ctx: ThreadContext) -> None:
        ctx.v_bit = False
        ctx.s_bit = False
        ctx.j_bit = False
        ctx.parked = False
        ctx.local_committed = 0
        ctx.memory_reads.clear()
        ctx.reset_bits()
        self.memory.discard_context(ctx.id)
        self.hooks.context_discarded(ctx.id)

    def squash_from(self, ctx: ThreadContext, reason: SquashReason, reinitiate: bool = True) -> None:
        """Discard ``ctx`` and every younger context, then optionally re-clone them.

        Raises:
            ProtocolError: if ``ctx`` is the non-speculative context
        """
        if ctx.id == self.state.head or not ctx.s_bit:
            raise ProtocolError(f"context {ctx.id} is not speculative and cannot be squashed")
        victims = [ctx] + self.successors(ctx.id)
        for victim in victims:
            self._discard(victim)
        self.state.tail = self._prev(ctx.id)
        self.squashes[reason] += 1
        logger.debug(f"Squashed contexts {[v.id for v in victims]} ({reason.value})")
        if reinitiate:
            self.fill_free_slots()

    def _apply_squashes(self) -> None:
        live = [r for r in self._pending_squashes
                if self.contexts[r.ctx].v_bit and self.contexts[r.ctx].s_bit]
        self._pending_squashes.clear()
        if not live:
            return
        oldest = min(live, key=lambda r: self.position(r.ctx))
        self.squash_from(self.contexts[oldest.ctx], oldest.reason)

    def _continue_head(self, head: ThreadContext) -> None:
        head.reset_bits()
        head.j_bit = False
        head.iteration += 1
        self.memory.release_loads(head)
        self.hooks.context_continued(head.id, self.state.continuation)

    def _complete_head(self) -> None:
        head = self.head
        self.state.latch_anchors(head)
        self.iterations_completed += 1
        following = self.successors(head.id)
        if not following:
            self._continue_head(head)
            self.fill_free_slots()
            return

        successor = following[0]
        request = self.regdep.verify_promotion(head, successor) or self.memory.verify_reads(successor)
        if request is not None:
            self.squash_from(successor, request.reason, reinitiate=False)
            self._continue_head(head)
            self.fill_free_slots()
            return
        self._promote(head, successor)

    def _promote(self, head: ThreadContext, successor: ThreadContext) -> None:
        successor.s_bit = False
        for reg in range(1, UNIFIED_REGISTERS):
            cell = successor.regs[reg]
            if not cell.r_bit:
                cell.value = head.regs[reg].value
            cell.predicted = False
        self.promoted_commits += successor.local_committed
        successor.local_committed = 0
        self.memory.drain_on_promotion(successor.id)
        self.memory.release_loads(successor)

        self._discard(head)
        self.state.head = successor.id
        self.promotions += 1
        logger.debug(f"Context {successor.id} promoted (iteration {successor.iteration})")

        if successor.parked:
            self.exit_dsmt(ExitReason.LOOP_EXIT)
            return
        self.fill_free_slots()

    def end_of_cycle(self) -> None:
        """Apply what commit requested this cycle, oldest effect first."""
        if self._pending_squashes:
            self._apply_squashes()
        if self._pending_exit is not None and self.state.mode != DsmtMode.NON_DSMT:
            self.exit_dsmt(self._pending_exit)
            return
        self._pending_exit = None
        if self._start_full:
            self._start_full = False
            self._switch_to_full()
            self.fill_free_slots()
            return
        if self.state.mode == DsmtMode.FULL_DSMT:
            head = self.head
            if head.j_bit and self.memory.is_drained(head.id):
                self._complete_head()
            else:
                self.fill_free_slots()

    # -- checking -----------------------------------------------------------

    def check_invariants(self) -> None:
        """Raise ProtocolError when the ring violates its structural rules."""
        ring = self.order()
        valid = [ctx for ctx in self.contexts if ctx.v_bit]
        if len(ring) != len(valid):
            raise ProtocolError("valid contexts are not contiguous from the head")
        non_speculative = [ctx for ctx in valid if not ctx.s_bit]
        if len(non_speculative) != 1 or non_speculative[0].id != self.state.head:
            raise ProtocolError("exactly one non-speculative context must sit at the head")
        if ring and ring[-1].id != self.state.tail:
            raise ProtocolError("tail does not match the last valid context")
        for older, younger in zip(ring, ring[1:]):
            if younger.iteration != older.iteration + 1:
                raise ProtocolError(
                    f"iteration order broken: ctx {older.id}={older.iteration}, ctx {younger.id}={younger.iteration}"
                )
        for ctx in ring:
            if ctx.j_bit and ctx.parked:
                raise ProtocolError(f"ctx {ctx.id} is both complete and parked")
