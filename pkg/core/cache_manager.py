"""Process-wide cache of assembled programs and finished run reports."""

import hashlib
import json
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Any, Dict, Hashable, Optional

from .config import SimConfig
from .isa import Program
from .report import SimReport


@dataclass
class CachedProgram:
    program_id: str
    name: str
    program: Program
    source_lines: int


def source_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def config_hash(config: SimConfig) -> str:
    payload = json.dumps(config.model_dump(mode="json"), sort_keys=True)
    return hashlib.md5(payload.encode()).hexdigest()[:12]


class CacheManager:
    """Process-wide singleton behind the HTTP API.

    Holds:
    - assembled programs, keyed by the hash of their source
    - reports of completed runs, keyed by program id and configuration hash
    """

    _instance = None
    _lock = threading.Lock()

    def __new__(cls):
        if cls._instance is None:
            with cls._lock:
                if cls._instance is None:
                    cls._instance = super().__new__(cls)
                    cls._instance._initialized = False
        return cls._instance

    def __init__(self):
        if self._initialized:
            return

        self._initialized = True
        self._programs: Dict[str, CachedProgram] = {}
        self._reports = LRUCache(maxsize=256)
        self._cache_stats = {
            'hits': 0,
            'misses': 0,
            'evictions': 0
        }

    def get_program(self, program_id: str) -> Optional[CachedProgram]:
        return self._programs.get(program_id)

    def add_program(self, name: str, source: str, program: Program,
                    defines: Optional[Dict[str, int]] = None) -> CachedProgram:
        """Cache an assembled program; the same source and defines always map to the same id."""
        program_id = source_hash(source + json.dumps(defines or {}, sort_keys=True))
        cached = self._programs.get(program_id)
        if cached is None:
            cached = CachedProgram(program_id, name, program, len(source.splitlines()))
            self._programs[program_id] = cached
        return cached

    def get_report(self, program_id: str, config: SimConfig) -> Optional[SimReport]:
        report = self._reports.get((program_id, config_hash(config)))
        if report is not None:
            self._cache_stats['hits'] += 1
        else:
            self._cache_stats['misses'] += 1
        return report

    def set_report(self, program_id: str, config: SimConfig, report: SimReport) -> None:
        if self._reports.set((program_id, config_hash(config)), report):
            self._cache_stats['evictions'] += 1

    def clear_program(self, program_id: str) -> bool:
        """Forget a program and every report produced from it."""
        found = self._programs.pop(program_id, None) is not None
        removed = self._reports.remove_where(lambda key: key[0] == program_id)
        return found or removed > 0

    def get_stats(self) -> Dict[str, Any]:
        return {
            **self._cache_stats,
            'program_count': len(self._programs),
            'report_count': self._reports.size(),
        }

    def clear_all(self) -> None:
        self._programs.clear()
        self._reports.clear()
        self._cache_stats = {
            'hits': 0,
            'misses': 0,
            'evictions': 0
        }


class LRUCache:
    """Bounded mapping that evicts the least recently used key."""

    def __init__(self, maxsize: int = 100):
        self.maxsize = maxsize
        self._cache: "OrderedDict[Hashable, Any]" = OrderedDict()

    def get(self, key: Hashable) -> Optional[Any]:
        if key not in self._cache:
            return None
        self._cache.move_to_end(key)
        return self._cache[key]

    def set(self, key: Hashable, value: Any) -> bool:
        """Store ``value``; returns True when another entry was evicted."""
        evicted = False
        if key in self._cache:
            self._cache.move_to_end(key)
        elif len(self._cache) >= self.maxsize:
            self._cache.popitem(last=False)
            evicted = True
        self._cache[key] = value
        return evicted

    def remove_where(self, predicate) -> int:
        doomed = [key for key in self._cache if predicate(key)]
        for key in doomed:
            del self._cache[key]
        return len(doomed)

    def clear(self) -> None:
        self._cache.clear()

    def size(self) -> int:
        return len(self._cache)
