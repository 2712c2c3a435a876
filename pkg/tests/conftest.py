"""Shared pytest fixtures for the simulator tests"""
import pytest
from typing import Any, Dict, Optional

from core.assembler import assemble
from core.caches import CacheModel
from core.config import CacheConfig, DsmtConfig, SimConfig, build_config
from core.isa import Program
from core.memory import MemorySystem
from core.tciu import Tciu


COUNTED_LOOP = """
.equ N 12
.data
xs:     .space N
.text
        addi r1, r0, xs
        addi r3, r0, 0
        addi r4, r0, N
loop:   sw r3, 0(r1)
        addi r1, r1, 4
        addi r3, r3, 1
        blt r3, r4, loop
        halt
"""


@pytest.fixture
def program_from():
    """Factory fixture assembling a listing into a Program"""
    def _assemble(source: str, **defines: int) -> Program:
        return assemble(source, defines or None)

    return _assemble


@pytest.fixture
def counted_loop(program_from) -> Program:
    """A twelve-iteration store loop"""
    return program_from(COUNTED_LOOP)


@pytest.fixture
def counted_loop_file(tmp_path):
    """The counted loop written out as an .asm listing"""
    path = tmp_path / "counted.asm"
    path.write_text(COUNTED_LOOP)
    return path


@pytest.fixture
def make_config():
    """Factory fixture for small, checked configurations

    Args:
        contexts: Hardware contexts
        **settings: Dotted config keys (``dsmt.window_cycles``) or top-level fields
    """
    def _make(contexts: int = 4, **settings: Any) -> SimConfig:
        layer: Dict[str, Any] = {
            "context_count": contexts,
            "check_invariants": True,
            "max_cycles": 200_000,
            "deadlock_cycles": 5_000,
        }
        layer.update({key.replace("__", "."): value for key, value in settings.items()})
        return build_config(layer)

    return _make


@pytest.fixture
def make_tciu():
    """Factory fixture for a TCIU rig without a pipeline

    Returns a (tciu, memory) pair sharing a fresh cache model.
    """
    def _make(contexts: int = 4, memory: Optional[Dict[int, int]] = None,
              **dsmt: Any) -> tuple:
        config = DsmtConfig(**dsmt)
        cache = CacheModel(CacheConfig())
        system = MemorySystem(dict(memory or {}), cache, contexts, mdrt_entries=config.mdrt_entries,
                              strict_lbit_squash=config.strict_lbit_squash)
        tciu = Tciu(contexts, config, system)
        return tciu, system

    return _make


@pytest.fixture
def full_dsmt(make_tciu):
    """Factory fixture: a TCIU already in full DSMT with every slot cloned"""
    def _make(contexts: int = 4, target: int = 0x400010, branch: int = 0x400020, **kwargs: Any):
        tciu, system = make_tciu(contexts, **kwargs)
        tciu.enter_pre_dsmt(target, branch)
        for _ in range(tciu.config.pre_dsmt_iterations):
            tciu.complete_iteration(tciu.state.head)
        tciu.end_of_cycle()
        return tciu, system

    return _make
