"""Per-context out-of-order pipelines sharing one set of functional units.

Each context has its own decode queue, instruction queue (IQ), reorder buffer
(ROB) and LSQ; functional units, data ports, the BTB and the fetch ports are
shared. ``Pipeline.run_stages`` advances one cycle in the order

    commit -> write-back -> memory -> issue -> dispatch -> fetch

so a stage never sees what a later stage did in the same cycle. Branches are
predicted when fetched and recovered when they commit.
"""

import heapq
import itertools
import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Dict, List, NamedTuple, Optional, Protocol, Sequence, TextIO, Tuple

from .branch_predictor import BranchOutcome, BranchTargetBuffer
from .caches import AccessKind, CacheModel
from .config import FunctionalUnitConfig, SimConfig
from .errors import ProtocolError, RunawayError, TrapError
from .isa import WORD_BYTES, FuClass, Instruction, Opcode, Program, classify_fu, evaluate
from .memory import LsqEntry, MemOpType, MemorySystem
from .regdep import ReadKind
from .tciu import DsmtMode, Tciu

logger = logging.getLogger(__name__)

FETCH_POLICIES = ("icount2.8m", "ideal")


class FetchCandidate(NamedTuple):
    ctx: int
    icount: int
    speculative: bool


def fetch_select(candidates: Sequence[FetchCandidate], ports: int, policy: str = "icount2.8m") -> List[int]:
    """Assign fetch ports for this cycle.

    ``icount2.8m`` serves the non-speculative context first and then the
    speculative contexts with the fewest front-end instructions (lowest id on
    ties). ``ideal`` gives every candidate its own port.
    """
    if policy not in FETCH_POLICIES:
        raise ValueError(f"unknown fetch policy '{policy}'")
    if policy == "ideal":
        return [c.ctx for c in candidates]
    head = [c for c in candidates if not c.speculative]
    rest = sorted((c for c in candidates if c.speculative), key=lambda c: (c.icount, c.ctx))
    return [c.ctx for c in (head + rest)[:ports]]


class FetchedInst(NamedTuple):
    pc: int
    inst: Optional[Instruction]
    predicted_next: int
    fault: Optional[str] = None


@dataclass(eq=False)
class Operand:
    reg: int
    value: Optional[int] = None
    ready_at: Optional[int] = None
    external: bool = False

    def ready(self, now: int) -> bool:
        return self.ready_at is not None and self.ready_at <= now


class LoadPhase(str, Enum):
    AGEN = "agen"
    ADDRESSED = "addressed"
    ACCESS = "access"


@dataclass(eq=False)
class RobEntry:
    seq: int
    ctx: int
    pc: int
    inst: Optional[Instruction]
    predicted_next: int
    fault: Optional[str] = None
    operands: List[Operand] = field(default_factory=list)
    fu: Optional[FuClass] = None
    dest: Optional[int] = None
    value: Optional[int] = None
    next_pc: Optional[int] = None
    address: Optional[int] = None
    trap: Optional[str] = None
    halt: bool = False
    lsq: Optional[LsqEntry] = None
    issued: bool = False
    done_cycle: Optional[int] = None
    complete: bool = False
    complete_cycle: Optional[int] = None
    load_phase: Optional[LoadPhase] = None
    addr_cycle: Optional[int] = None
    consumers: List[Operand] = field(default_factory=list)
    squashed: bool = False

    @property
    def is_load(self) -> bool:
        return self.inst is not None and self.inst.spec.is_load

    @property
    def is_store(self) -> bool:
        return self.inst is not None and self.inst.spec.is_store

    @property
    def taken(self) -> bool:
        return self.next_pc is not None and self.next_pc != self.pc + WORD_BYTES


class ControlObserver(Protocol):
    def head_control_committed(self, pc: int, target: int, taken: bool) -> None: ...


class FunctionalUnitPool:
    """Per-cycle issue slots of every FU class; unpipelined units stay busy for the full latency."""

    def __init__(self, units: Dict[FuClass, FunctionalUnitConfig], latencies: Dict[FuClass, int]):
        self.units = units
        self.latencies = latencies
        self.busy_until: Dict[FuClass, List[int]] = {fu: [0] * cfg.count for fu, cfg in units.items()}
        self.issued: Dict[FuClass, int] = {fu: 0 for fu in units}

    def begin_cycle(self) -> None:
        for fu in self.issued:
            self.issued[fu] = 0

    def try_acquire(self, fu: FuClass, now: int) -> bool:
        cfg = self.units[fu]
        if self.issued[fu] >= cfg.rs:
            return False
        if cfg.pipelined:
            if self.issued[fu] >= cfg.count:
                return False
        else:
            slots = self.busy_until[fu]
            free = next((i for i, until in enumerate(slots) if until <= now), None)
            if free is None:
                return False
            slots[free] = now + self.latencies[fu]
        self.issued[fu] += 1
        return True


class ContextPipeline:
    """Front end and in-flight window of one context."""

    def __init__(self, ctx_id: int):
        self.ctx_id = ctx_id
        self.decode_queue: Deque[FetchedInst] = deque()
        self.rob: Deque[RobEntry] = deque()
        self.iq: List[RobEntry] = []
        self.pending_loads: List[RobEntry] = []
        self.inflight: Dict[int, RobEntry] = {}
        self.fetch_pc = 0
        self.stopped = True
        self.halt_fetched = False
        self.fetch_ready_at = 0
        self.icache_ready_at = 0
        self.committed_pc = 0

    @property
    def icount(self) -> int:
        return len(self.decode_queue) + len(self.iq)

    def drop_window(self) -> None:
        for entry in self.rob:
            entry.squashed = True
        self.rob.clear()
        self.iq.clear()
        self.pending_loads.clear()
        self.inflight.clear()
        self.decode_queue.clear()

    def redirect(self, pc: int, ready_at: int = 0) -> None:
        self.fetch_pc = pc
        self.stopped = False
        self.halt_fetched = False
        self.fetch_ready_at = max(self.fetch_ready_at, ready_at)

    def stop(self, pc: int) -> None:
        self.fetch_pc = pc
        self.stopped = True


class Pipeline:
    def __init__(self, program: Program, config: SimConfig, tciu: Tciu, memory: MemorySystem,
                 cache: CacheModel, btb: BranchTargetBuffer, observer: Optional[ControlObserver] = None,
                 trace_file: Optional[TextIO] = None):
        self.program = program
        self.config = config
        self.pconfig = config.pipeline
        self.tciu = tciu
        self.regdep = tciu.regdep
        self.memory = memory
        self.cache = cache
        self.btb = btb
        self.observer = observer
        self.trace_file = trace_file
        self.contexts = [ContextPipeline(i) for i in range(len(tciu.contexts))]
        self.fus = FunctionalUnitPool(self.pconfig.units, config.latencies)
        self._seq = itertools.count()
        self._events: List[Tuple[int, int, RobEntry]] = []
        tciu.hooks = self

        self.cycle = 0
        self.halted = False
        self.halt_pc: Optional[int] = None
        self.head_commits = 0
        self.dsmt_commits = 0
        self.last_commit_cycle = 0
        self.branches_committed = 0
        self.mispredictions = 0
        self._cycle_commits: Dict[int, int] = {}
        self._cycle_fetch: List[int] = []

    def start(self, pc: int) -> None:
        self.contexts[self.tciu.state.head].committed_pc = pc
        self.contexts[self.tciu.state.head].redirect(pc)

    # -- TCIU hooks ---------------------------------------------------------

    def context_discarded(self, ctx_id: int) -> None:
        pipe = self.contexts[ctx_id]
        pipe.drop_window()
        pipe.stopped = True

    def context_cloned(self, ctx_id: int, pc: int) -> None:
        pipe = self.contexts[ctx_id]
        pipe.drop_window()
        pipe.fetch_ready_at = 0
        pipe.committed_pc = pc
        pipe.redirect(pc, self.cycle + 1 + self.config.dsmt.clone_cost)

    def context_continued(self, ctx_id: int, pc: int) -> None:
        pipe = self.contexts[ctx_id]
        pipe.drop_window()
        self.memory.lsqs[ctx_id].flush_younger(-1)
        self._recompute_busy(ctx_id)
        pipe.committed_pc = pc
        pipe.redirect(pc, self.cycle + 1)

    def context_released(self, ctx_id: int) -> None:
        self.contexts[ctx_id].stopped = False

    # -- helpers ------------------------------------------------------------

    def _schedule(self, entry: RobEntry, done_cycle: int) -> None:
        entry.done_cycle = done_cycle
        heapq.heappush(self._events, (done_cycle, entry.seq, entry))

    def _recompute_busy(self, ctx_id: int) -> None:
        regs = self.tciu.contexts[ctx_id].regs
        for cell in regs:
            cell.busy_tag = None
        for entry in self.contexts[ctx_id].rob:
            if entry.dest is not None:
                regs[entry.dest].busy_tag = entry.seq

    def _flush_younger(self, ctx_id: int, seq: int) -> None:
        """Drop everything in the context younger than ``seq``."""
        pipe = self.contexts[ctx_id]
        kept: Deque[RobEntry] = deque()
        for entry in pipe.rob:
            if entry.seq <= seq:
                kept.append(entry)
            else:
                entry.squashed = True
                pipe.inflight.pop(entry.seq, None)
        pipe.rob = kept
        pipe.iq = [e for e in pipe.iq if not e.squashed]
        pipe.pending_loads = [e for e in pipe.pending_loads if not e.squashed]
        pipe.decode_queue.clear()
        self.memory.lsqs[ctx_id].flush_younger(seq)
        self._recompute_busy(ctx_id)

    def _predict(self, pc: int, inst: Instruction) -> int:
        spec = inst.spec
        if not spec.is_control:
            return pc + WORD_BYTES
        if inst.opcode == Opcode.J:
            return inst.branch_target(pc)
        prediction = self.btb.predict(pc)
        if prediction.taken and prediction.target is not None:
            return prediction.target
        return pc + WORD_BYTES

    def _is_closing_branch(self, pc: int) -> bool:
        return self.tciu.mode != DsmtMode.NON_DSMT and pc == self.tciu.state.loop_branch

    # -- commit -------------------------------------------------------------

    def commit_stage(self) -> None:
        self._cycle_commits = {}
        for ctx in self.tciu.order():
            if not ctx.v_bit:
                continue
            self._commit_context(ctx.id)
            if self.halted:
                return

    def _count_commit(self, ctx_id: int) -> None:
        ctx = self.tciu.contexts[ctx_id]
        if ctx.s_bit:
            ctx.local_committed += 1
        else:
            self.head_commits += 1
            if self.tciu.mode == DsmtMode.FULL_DSMT:
                self.dsmt_commits += 1
        self.last_commit_cycle = self.cycle
        self._cycle_commits[ctx_id] = self._cycle_commits.get(ctx_id, 0) + 1

    def _commit_context(self, ctx_id: int) -> None:
        pipe = self.contexts[ctx_id]
        ctx = self.tciu.contexts[ctx_id]
        now = self.cycle
        committed = 0
        while committed < self.pconfig.commit_width and pipe.rob:
            if not self.tciu.can_commit(ctx_id):
                return
            entry = pipe.rob[0]
            if not entry.complete or entry.complete_cycle >= now:
                return
            speculative = ctx.s_bit

            if entry.fault or entry.trap or entry.halt:
                if speculative:
                    return
                if entry.fault:
                    raise RunawayError(entry.pc)
                if entry.trap:
                    raise TrapError(entry.pc, entry.trap)
                if not self.memory.is_drained(ctx_id):
                    return
                pipe.rob.popleft()
                self._count_commit(ctx_id)
                self.halted = True
                self.halt_pc = entry.pc
                pipe.committed_pc = entry.pc
                return

            inst = entry.inst
            if entry.is_store:
                result = self.memory.commit_store(ctx_id, entry.lsq)
                if not result.done:
                    return
                self.tciu.request_squash(result.squash)
            pipe.rob.popleft()
            pipe.inflight.pop(entry.seq, None)

            if self.tciu.dsmt_active:
                self.regdep.note_commit_reads(ctx_id, inst.source_regs)
            if entry.dest is not None:
                self.tciu.request_squash(
                    self.regdep.commit_write(ctx_id, entry.dest, entry.value, entry.seq)
                )
            if entry.is_load:
                self.memory.lsqs[ctx_id].remove(entry.lsq)
            self.tciu.lsst_observe(inst)
            pipe.committed_pc = entry.next_pc
            self._count_commit(ctx_id)
            committed += 1

            if inst.spec.is_control and self._commit_control(ctx_id, entry):
                return

    def _commit_control(self, ctx_id: int, entry: RobEntry) -> bool:
        """Resolve a committed control transfer. Returns True to stop committing this context."""
        pipe = self.contexts[ctx_id]
        inst = entry.inst
        next_pc = entry.next_pc
        taken = entry.taken
        speculative = self.tciu.contexts[ctx_id].s_bit
        mode = self.tciu.mode
        closing = taken and self._is_closing_branch(entry.pc)

        if inst.opcode != Opcode.J:
            self.branches_committed += 1
            self.btb.update(entry.pc, BranchOutcome(taken, inst.branch_target(entry.pc)))
        mispredicted = next_pc != entry.predicted_next
        if mispredicted:
            self.mispredictions += 1

        parked = self.tciu.note_control_transfer(ctx_id, next_pc)
        stop = False
        if closing and mode == DsmtMode.FULL_DSMT:
            self._flush_younger(ctx_id, entry.seq)
            pipe.stop(next_pc)
            self.tciu.complete_iteration(ctx_id)
            stop = True
        elif parked:
            self._flush_younger(ctx_id, entry.seq)
            pipe.stop(next_pc)
            stop = True
        else:
            if mispredicted:
                self._flush_younger(ctx_id, entry.seq)
                pipe.redirect(next_pc, self.cycle + 1)
                stop = True
            if closing:
                self.tciu.complete_iteration(ctx_id)
                # the switch latches stride bases from this exact iteration boundary
                stop = stop or self.tciu.full_dsmt_pending

        if not speculative and self.observer is not None:
            self.observer.head_control_committed(entry.pc, inst.branch_target(entry.pc), taken)
        return stop

    # -- write-back ---------------------------------------------------------

    def writeback_stage(self) -> None:
        now = self.cycle
        while self._events and self._events[0][0] <= now:
            _, _, entry = heapq.heappop(self._events)
            if entry.squashed:
                continue
            if entry.load_phase == LoadPhase.AGEN:
                entry.lsq.addr = entry.address
                entry.load_phase = LoadPhase.ADDRESSED
                entry.addr_cycle = now
                self.contexts[entry.ctx].pending_loads.append(entry)
                continue
            if entry.is_store:
                entry.lsq.addr = entry.address
                entry.lsq.value = entry.value
            entry.complete = True
            entry.complete_cycle = now
            for operand in entry.consumers:
                operand.value = entry.value
                operand.ready_at = now + 1
            entry.consumers.clear()

    # -- memory -------------------------------------------------------------

    def memory_stage(self) -> None:
        for request in self.memory.drain_step():
            self.tciu.request_squash(request)
        now = self.cycle
        for ctx in self.tciu.order():
            pipe = self.contexts[ctx.id]
            for entry in sorted(pipe.pending_loads, key=lambda e: e.seq):
                if entry.squashed or entry.addr_cycle >= now:
                    continue
                result = self.memory.issue_load(ctx.id, entry.lsq)
                if result is None:
                    continue
                pipe.pending_loads.remove(entry)
                entry.value = result.value
                entry.lsq.value = result.value
                entry.load_phase = LoadPhase.ACCESS
                self._schedule(entry, now + result.latency)

    # -- issue --------------------------------------------------------------

    def _refresh_external(self, ctx_id: int) -> None:
        now = self.cycle
        for entry in self.contexts[ctx_id].iq:
            for operand in entry.operands:
                if not operand.external or operand.ready_at is not None:
                    continue
                resolution = self.regdep.resolve_live_in(ctx_id, operand.reg)
                if resolution.kind != ReadKind.STALL:
                    operand.value = resolution.value
                    operand.ready_at = now + 1

    def issue_stage(self) -> None:
        now = self.cycle
        self.fus.begin_cycle()
        for ctx in self.tciu.order():
            pipe = self.contexts[ctx.id]
            self._refresh_external(ctx.id)
            issued = 0
            for entry in list(pipe.iq):
                if issued >= self.pconfig.issue_width:
                    break
                if not all(op.ready(now) for op in entry.operands):
                    continue
                if not self.fus.try_acquire(entry.fu, now):
                    continue
                pipe.iq.remove(entry)
                self._execute(entry, now)
                issued += 1

    def _execute(self, entry: RobEntry, now: int) -> None:
        inst = entry.inst
        outcome = evaluate(inst, entry.pc, [op.value for op in entry.operands])
        entry.issued = True
        entry.next_pc = outcome.next_pc
        entry.trap = outcome.trap
        _, latency = classify_fu(inst, self.config.latencies)
        if inst.spec.is_load:
            entry.address = outcome.address
            entry.load_phase = LoadPhase.AGEN
        elif inst.spec.is_store:
            entry.address = outcome.address
            entry.value = outcome.store_value
        else:
            # a trapping divide still wakes its consumers; it never commits
            entry.value = 0 if outcome.trap else outcome.value
        self._schedule(entry, now + latency)

    # -- dispatch -----------------------------------------------------------

    def dispatch_stage(self) -> None:
        for ctx in self.tciu.order():
            self._dispatch_context(ctx.id)

    def _dispatch_context(self, ctx_id: int) -> int:
        pipe = self.contexts[ctx_id]
        lsq = self.memory.lsqs[ctx_id]
        now = self.cycle
        dispatched = 0
        while pipe.decode_queue and dispatched < self.pconfig.dispatch_width:
            fetched = pipe.decode_queue[0]
            if len(pipe.rob) >= self.pconfig.rob_size:
                break
            inst = fetched.inst
            plain = inst is not None and inst.opcode != Opcode.HALT
            if plain and len(pipe.iq) >= self.pconfig.iq_size:
                break
            if plain and inst.spec.is_memory and lsq.is_full():
                break
            pipe.decode_queue.popleft()
            entry = RobEntry(next(self._seq), ctx_id, fetched.pc, inst, fetched.predicted_next,
                             fault=fetched.fault)
            pipe.rob.append(entry)
            pipe.inflight[entry.seq] = entry
            dispatched += 1
            if not plain:
                entry.halt = inst is not None
                entry.next_pc = fetched.pc
                entry.complete = True
                entry.complete_cycle = now
                continue

            entry.fu = inst.fu_class
            entry.operands = [self._read_operand(ctx_id, reg) for reg in inst.source_regs]
            entry.dest = inst.dest_reg
            if entry.dest is not None:
                self.tciu.contexts[ctx_id].regs[entry.dest].busy_tag = entry.seq
            if inst.spec.is_memory:
                kind = MemOpType.LOAD if inst.spec.is_load else MemOpType.STORE
                entry.lsq = lsq.allocate(kind, entry.seq, ctx_id)
            pipe.iq.append(entry)
        return dispatched

    def _read_operand(self, ctx_id: int, reg: int) -> Operand:
        now = self.cycle
        resolution = self.regdep.read_register(ctx_id, reg)
        if resolution.kind == ReadKind.STALL:
            return Operand(reg, external=True)
        if resolution.kind != ReadKind.OWN_PENDING:
            return Operand(reg, resolution.value, now)
        producer = self.contexts[ctx_id].inflight.get(resolution.tag)
        if producer is None:
            raise ProtocolError(f"ctx {ctx_id}: no in-flight producer for tag {resolution.tag}")
        if producer.complete:
            return Operand(reg, producer.value, now)
        operand = Operand(reg)
        producer.consumers.append(operand)
        return operand

    # -- fetch --------------------------------------------------------------

    def _can_fetch(self, ctx_id: int) -> bool:
        pipe = self.contexts[ctx_id]
        ctx = self.tciu.contexts[ctx_id]
        now = self.cycle
        return (
            ctx.v_bit and not ctx.j_bit and not pipe.stopped and not pipe.halt_fetched
            and pipe.fetch_ready_at <= now and pipe.icache_ready_at <= now
            and len(pipe.decode_queue) < self.pconfig.decode_queue_size
        )

    def fetch_stage(self) -> None:
        candidates = [
            FetchCandidate(ctx.id, self.contexts[ctx.id].icount, ctx.s_bit)
            for ctx in self.tciu.order() if self._can_fetch(ctx.id)
        ]
        self._cycle_fetch = fetch_select(candidates, self.config.fetch_port_count, self.config.fetch_policy)
        for ctx_id in self._cycle_fetch:
            self._fetch(ctx_id)

    def _fetch(self, ctx_id: int) -> int:
        pipe = self.contexts[ctx_id]
        now = self.cycle
        line_size = self.config.cache.line_size
        pc = pipe.fetch_pc
        line = None
        fetched = 0
        while fetched < self.pconfig.fetch_width and len(pipe.decode_queue) < self.pconfig.decode_queue_size:
            if not self.program.contains(pc):
                pipe.decode_queue.append(FetchedInst(pc, None, pc, fault=f"pc 0x{pc:08x} outside the image"))
                pipe.stopped = True
                break
            if pc // line_size != line:
                latency = self.cache.cache_access(pc, AccessKind.IFETCH)
                if latency > self.config.cache.l1_latency:
                    pipe.icache_ready_at = now + latency
                    break
                line = pc // line_size
            inst = self.program.fetch(pc)
            predicted = self._predict(pc, inst)
            pipe.decode_queue.append(FetchedInst(pc, inst, predicted))
            fetched += 1
            if inst.opcode == Opcode.HALT:
                pipe.halt_fetched = True
                pc = pc + WORD_BYTES
                break
            taken = predicted != pc + WORD_BYTES
            if taken and self.tciu.mode == DsmtMode.FULL_DSMT and pc == self.tciu.state.loop_branch:
                pipe.stop(predicted)
                return fetched
            pc = predicted
            if taken:
                break
        pipe.fetch_pc = pc
        return fetched

    # -- DSMT support -------------------------------------------------------

    def trim_to_iteration(self, ctx_id: int) -> None:
        """Cut the context's window after its first predicted-taken loop-closing branch."""
        pipe = self.contexts[ctx_id]
        for entry in pipe.rob:
            if entry.pc == self.tciu.state.loop_branch and entry.predicted_next != entry.pc + WORD_BYTES:
                self._flush_younger(ctx_id, entry.seq)
                pipe.stop(entry.predicted_next)
                return
        for index, fetched in enumerate(pipe.decode_queue):
            if fetched.pc == self.tciu.state.loop_branch and fetched.predicted_next != fetched.pc + WORD_BYTES:
                while len(pipe.decode_queue) > index + 1:
                    pipe.decode_queue.pop()
                pipe.stop(fetched.predicted_next)
                return

    # -- cycle --------------------------------------------------------------

    def run_stages(self) -> None:
        self.cache.begin_cycle()
        self.commit_stage()
        if self.halted:
            self.cache.end_cycle()
            return
        self.writeback_stage()
        self.memory_stage()
        self.issue_stage()
        self.dispatch_stage()
        self.fetch_stage()
        self.cache.end_cycle()
        if self.trace_file is not None:
            self._trace()

    def _trace(self) -> None:
        commits = " ".join(f"c{ctx}:{count}" for ctx, count in sorted(self._cycle_commits.items()))
        self.trace_file.write(
            f"{self.cycle} mode={self.tciu.mode.value} fetch={self._cycle_fetch} commit=[{commits}]\n"
        )

    def check_invariants(self) -> None:
        for pipe in self.contexts:
            if len(pipe.rob) > self.pconfig.rob_size:
                raise ProtocolError(f"ctx {pipe.ctx_id}: ROB over capacity")
            if len(pipe.iq) > self.pconfig.iq_size:
                raise ProtocolError(f"ctx {pipe.ctx_id}: IQ over capacity")
            if len(self.memory.lsqs[pipe.ctx_id]) > self.pconfig.lsq_size:
                raise ProtocolError(f"ctx {pipe.ctx_id}: LSQ over capacity")
            seqs = [e.seq for e in pipe.rob]
            if seqs != sorted(seqs):
                raise ProtocolError(f"ctx {pipe.ctx_id}: ROB out of program order")
        for fu, count in self.fus.issued.items():
            if count > self.pconfig.units[fu].rs:
                raise ProtocolError(f"{fu.value}: more issues than reservation stations")
        if len(self.memory.mdrt) > self.memory.mdrt.capacity:
            raise ProtocolError("MDRT over capacity")
