"""Memory dataflow: per-context load/store queues, the MDRT, store commit and draining.

Only the non-speculative context writes memory. Speculative contexts commit
their stores into their own LSQ and publish them through the Memory Dataflow
Resolution Table (MDRT), where successors can pick the values up. Every load
a speculative context takes from outside its own LSQ sets its L bit in the
MDRT and is recorded so it can be checked when earlier threads store, and
once more when the context is promoted.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Deque, Dict, List, NamedTuple, Optional

from .caches import AccessKind, CacheModel
from .events import SquashReason, SquashRequest
from .oracle import StoreRecord

if TYPE_CHECKING:
    from .tciu import ThreadContext, Tciu

logger = logging.getLogger(__name__)


class MemOpType(str, Enum):
    LOAD = "load"
    STORE = "store"


@dataclass(eq=False)
class LsqEntry:
    kind: MemOpType
    seq: int
    ctx: int
    addr: Optional[int] = None
    value: Optional[int] = None
    locally_committed: bool = False

    @property
    def resolved(self) -> bool:
        return self.addr is not None


class ForwardStatus(str, Enum):
    FORWARD = "forward"
    WAIT = "wait"
    MISS = "miss"


class LoadStoreQueue:
    """Program-ordered memory operations of one context."""

    def __init__(self, capacity: int = 64):
        self.capacity = capacity
        self.entries: List[LsqEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def is_full(self) -> bool:
        return len(self.entries) >= self.capacity

    def allocate(self, kind: MemOpType, seq: int, ctx: int) -> Optional[LsqEntry]:
        if self.is_full():
            return None
        entry = LsqEntry(kind, seq, ctx)
        self.entries.append(entry)
        return entry

    def remove(self, entry: LsqEntry) -> None:
        self.entries.remove(entry)

    def flush_younger(self, seq: int) -> None:
        self.entries = [e for e in self.entries if e.seq <= seq or e.locally_committed]

    def clear(self) -> None:
        self.entries.clear()

    def forward(self, load: LsqEntry):
        """Store-to-load forwarding from older stores of the same context.

        Returns (status, value). Any older store with an unresolved address
        makes the load wait.
        """
        match: Optional[LsqEntry] = None
        for entry in self.entries:
            if entry.seq >= load.seq:
                continue
            if entry.kind != MemOpType.STORE:
                continue
            if not entry.resolved:
                return ForwardStatus.WAIT, None
            if entry.addr == load.addr:
                match = entry
        if match is not None:
            return ForwardStatus.FORWARD, match.value
        return ForwardStatus.MISS, None

    def buffered_stores(self) -> List[LsqEntry]:
        return [e for e in self.entries if e.locally_committed]


@dataclass
class MdrtEntry:
    addr: int
    contexts: int
    value: int = 0
    writer: Optional[int] = None
    v_bit: bool = True
    l_bits: List[bool] = field(default_factory=list)
    s_bits: List[bool] = field(default_factory=list)

    def __post_init__(self):
        if not self.l_bits:
            self.l_bits = [False] * self.contexts
        if not self.s_bits:
            self.s_bits = [False] * self.contexts

    @property
    def held(self) -> bool:
        return any(self.l_bits) or any(self.s_bits)


class Mdrt:
    """Fully associative table, one entry per word address, stall when full."""

    def __init__(self, capacity: int, contexts: int):
        self.capacity = capacity
        self.contexts = contexts
        self.entries: Dict[int, MdrtEntry] = {}
        self.peak_occupancy = 0
        self.full_stalls = 0

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, addr: int) -> Optional[MdrtEntry]:
        return self.entries.get(addr)

    def can_allocate(self, addr: int) -> bool:
        return addr in self.entries or len(self.entries) < self.capacity

    def allocate(self, addr: int) -> Optional[MdrtEntry]:
        entry = self.entries.get(addr)
        if entry is not None:
            return entry
        if len(self.entries) >= self.capacity:
            self.full_stalls += 1
            return None
        entry = MdrtEntry(addr, self.contexts)
        self.entries[addr] = entry
        self.peak_occupancy = max(self.peak_occupancy, len(self.entries))
        return entry

    def _free_unused(self, addrs) -> None:
        for addr in addrs:
            entry = self.entries.get(addr)
            if entry is not None and not entry.held:
                del self.entries[addr]

    def clear_load_bits(self, ctx: int) -> None:
        touched = []
        for addr, entry in self.entries.items():
            if entry.l_bits[ctx]:
                entry.l_bits[ctx] = False
                touched.append(addr)
        self._free_unused(touched)

    def clear_store_bit(self, ctx: int, addr: int) -> None:
        entry = self.entries.get(addr)
        if entry is None:
            return
        entry.s_bits[ctx] = False
        if entry.writer == ctx:
            entry.writer = None
        self._free_unused([addr])

    def release(self, ctx: int) -> None:
        """Drop every bit ``ctx`` holds and free entries nobody references."""
        touched = []
        for addr, entry in self.entries.items():
            if entry.l_bits[ctx] or entry.s_bits[ctx]:
                entry.l_bits[ctx] = False
                entry.s_bits[ctx] = False
                if entry.writer == ctx:
                    entry.writer = None
                touched.append(addr)
        self._free_unused(touched)

    def clear(self) -> None:
        self.entries.clear()


class ValueSource(str, Enum):
    LSQ_FORWARD = "LsqForward"
    MDRT_VALUE = "MdrtValue"
    MEMORY = "Memory"


class LoadResult(NamedTuple):
    source: ValueSource
    value: int
    latency: int


class StoreCommit(NamedTuple):
    done: bool
    squash: Optional[SquashRequest] = None


class MemorySystem:
    """Architectural memory plus every structure that stands between it and the contexts."""

    def __init__(self, memory: Dict[int, int], cache: CacheModel, contexts: int,
                 lsq_size: int = 64, mdrt_entries: int = 64, strict_lbit_squash: bool = False):
        self.memory = memory
        self.cache = cache
        self.strict = strict_lbit_squash
        self.lsqs = [LoadStoreQueue(lsq_size) for _ in range(contexts)]
        self.mdrt = Mdrt(mdrt_entries, contexts)
        self.store_trace: List[StoreRecord] = []
        self.tciu: Optional["Tciu"] = None
        self._draining: Deque[LsqEntry] = deque()
        self._draining_ctx: Optional[int] = None
        self.memory_squashes = 0

    def attach(self, tciu: "Tciu") -> None:
        self.tciu = tciu

    def read(self, addr: int) -> int:
        return self.memory.get(addr, 0)

    # -- loads --------------------------------------------------------------

    def issue_load(self, ctx_id: int, load: LsqEntry) -> Optional[LoadResult]:
        """Perform a load whose address is resolved; None means try again next cycle."""
        status, value = self.lsqs[ctx_id].forward(load)
        if status == ForwardStatus.WAIT:
            return None
        if status == ForwardStatus.FORWARD:
            return LoadResult(ValueSource.LSQ_FORWARD, value, 1)

        ctx = self.tciu.contexts[ctx_id]
        addr = load.addr
        if ctx.s_bit and not self.mdrt.can_allocate(addr):
            self.mdrt.full_stalls += 1
            return None
        if not self.cache.grant_data_port():
            return None
        latency = self.cache.cache_access(addr, AccessKind.DATA)
        if not ctx.s_bit:
            return LoadResult(ValueSource.MEMORY, self.read(addr), latency)

        entry = self.mdrt.allocate(addr)
        entry.l_bits[ctx_id] = True
        source, value = ValueSource.MEMORY, self.read(addr)
        if entry.writer is not None and entry.s_bits[entry.writer]:
            if any(p.id == entry.writer for p in self.tciu.predecessors(ctx_id)):
                source, value = ValueSource.MDRT_VALUE, entry.value
        ctx.memory_reads.append((addr, value))
        return LoadResult(source, value, latency)

    # -- stores -------------------------------------------------------------

    def commit_store(self, ctx_id: int, store: LsqEntry) -> StoreCommit:
        ctx = self.tciu.contexts[ctx_id]
        addr, value = store.addr, store.value
        if ctx.s_bit:
            entry = self.mdrt.allocate(addr)
            if entry is None:
                return StoreCommit(False)
            store.locally_committed = True
            entry.value = value
            entry.writer = ctx_id
            entry.s_bits[ctx_id] = True
            return StoreCommit(True, self._scan_successors(ctx_id, addr, value))

        if self._draining_ctx == ctx_id and self._draining:
            return StoreCommit(False)
        if not self.cache.grant_data_port():
            return StoreCommit(False)
        self.cache.cache_access(addr, AccessKind.DATA)
        self.lsqs[ctx_id].remove(store)
        return StoreCommit(True, self._write(ctx_id, addr, value))

    def _write(self, ctx_id: int, addr: int, value: int) -> Optional[SquashRequest]:
        self.memory[addr] = value
        self.store_trace.append(StoreRecord(addr, value))
        return self._scan_successors(ctx_id, addr, value)

    def _scan_successors(self, ctx_id: int, addr: int, value: int) -> Optional[SquashRequest]:
        entry = self.mdrt.lookup(addr)
        if entry is None or self.tciu is None:
            return None
        for successor in self.tciu.successors(ctx_id):
            if entry.l_bits[successor.id]:
                reads = [v for a, v in successor.memory_reads if a == addr]
                if self.strict or any(v != value for v in reads):
                    self.memory_squashes += 1
                    return SquashRequest(successor.id, SquashReason.MEMORY_EARLY_READ, f"0x{addr:08x}")
                return None
            if entry.s_bits[successor.id]:
                break
        return None

    # -- promotion ----------------------------------------------------------

    def drain_on_promotion(self, ctx_id: int) -> int:
        """Queue the promoted context's locally committed stores for memory, in order."""
        stores = self.lsqs[ctx_id].buffered_stores()
        self._draining = deque(stores)
        self._draining_ctx = ctx_id if stores else None
        return len(stores)

    def drain_step(self) -> List[SquashRequest]:
        """Write queued stores while data ports remain this cycle."""
        requests = []
        while self._draining and self.cache.ports_available > 0:
            store = self._draining.popleft()
            self.cache.grant_data_port()
            self.cache.cache_access(store.addr, AccessKind.DATA)
            self.lsqs[store.ctx].remove(store)
            self.mdrt.clear_store_bit(store.ctx, store.addr)
            request = self._write(store.ctx, store.addr, store.value)
            if request is not None:
                requests.append(request)
        if not self._draining:
            self._draining_ctx = None
        return requests

    def is_drained(self, ctx_id: int) -> bool:
        return self._draining_ctx != ctx_id

    def verify_reads(self, ctx: "ThreadContext") -> Optional[SquashRequest]:
        """Compare the recorded loads of a context about to be promoted with memory."""
        for addr, value in ctx.memory_reads:
            if self.read(addr) != value:
                self.memory_squashes += 1
                return SquashRequest(ctx.id, SquashReason.MEMORY_EARLY_READ, f"0x{addr:08x}")
        return None

    def release_loads(self, ctx: "ThreadContext") -> None:
        ctx.memory_reads.clear()
        self.mdrt.clear_load_bits(ctx.id)

    def discard_context(self, ctx_id: int) -> None:
        self.lsqs[ctx_id].clear()
        self.mdrt.release(ctx_id)
        if self._draining_ctx == ctx_id:
            self._draining.clear()
            self._draining_ctx = None

    def clear_mdrt(self) -> None:
        self.mdrt.clear()
