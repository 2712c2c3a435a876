"""Latency and port-contention cache model (no data, no coherence)."""

import logging
from enum import Enum
from typing import Dict, List, Tuple

import numpy as np

from .config import CacheConfig

logger = logging.getLogger(__name__)


class AccessKind(str, Enum):
    IFETCH = "ifetch"
    DATA = "data"


class CacheLevel:
    """Set-associative tag store with per-set LRU order (MRU at the end)."""

    def __init__(self, name: str, size: int, associativity: int, line_size: int):
        self.name = name
        self.line_size = line_size
        self.associativity = associativity
        self.set_count = max(1, size // (line_size * associativity))
        self._sets: List[List[int]] = [[] for _ in range(self.set_count)]
        self._stats = {"hits": 0, "misses": 0, "evictions": 0}

    def _locate(self, address: int) -> Tuple[int, int]:
        line = address // self.line_size
        return line % self.set_count, line // self.set_count

    def holds(self, address: int) -> bool:
        index, tag = self._locate(address)
        return tag in self._sets[index]

    def access(self, address: int) -> bool:
        """Look up a line, filling it on a miss. Returns True on a hit."""
        index, tag = self._locate(address)
        ways = self._sets[index]
        if tag in ways:
            ways.remove(tag)
            ways.append(tag)
            self._stats["hits"] += 1
            return True
        self._stats["misses"] += 1
        if len(ways) >= self.associativity:
            ways.pop(0)
            self._stats["evictions"] += 1
        ways.append(tag)
        return False

    def get_stats(self) -> Dict[str, int]:
        return dict(self._stats)


class CacheModel:
    """L1I/L1D backed by a unified L2, plus the per-cycle data-port arbiter."""

    def __init__(self, config: CacheConfig):
        self.config = config
        self.l1i = CacheLevel("L1I", config.l1i_size, config.associativity, config.line_size)
        self.l1d = CacheLevel("L1D", config.l1d_size, config.associativity, config.line_size)
        self.l2 = CacheLevel("L2", config.l2_size, config.associativity, config.line_size)
        self.port_histogram = np.zeros(config.data_ports + 1, dtype=np.int64)
        self._ports_used = 0

    def cache_access(self, address: int, kind: AccessKind = AccessKind.DATA) -> int:
        """Latency in cycles of one access; updates LRU state at every level touched."""
        first = self.l1i if kind == AccessKind.IFETCH else self.l1d
        if first.access(address):
            return self.config.l1_latency
        if self.l2.access(address):
            return self.config.l2_latency
        return self.config.memory_latency

    # -- data ports ---------------------------------------------------------

    def begin_cycle(self) -> None:
        self._ports_used = 0

    @property
    def ports_available(self) -> int:
        return self.config.data_ports - self._ports_used

    def grant_data_port(self) -> bool:
        if self._ports_used >= self.config.data_ports:
            return False
        self._ports_used += 1
        return True

    def end_cycle(self) -> None:
        self.port_histogram[self._ports_used] += 1

    def port_utilization(self) -> float:
        """Average data-port grants per cycle."""
        cycles = int(self.port_histogram.sum())
        if cycles == 0:
            return 0.0
        grants = np.arange(len(self.port_histogram), dtype=np.int64)
        return float((self.port_histogram * grants).sum()) / cycles

    def get_stats(self) -> Dict[str, Dict[str, int]]:
        return {level.name: level.get_stats() for level in (self.l1i, self.l1d, self.l2)}
