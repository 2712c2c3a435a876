"""Tests for the sequential reference interpreter"""
import io

import pytest

from core.errors import FuelExhaustedError, RunawayError, TrapError
from core.isa import DATA_BASE
from core.oracle import ArchState, Mismatch, Oracle, StoreRecord


class TestOracleRun:
    """Test running programs to completion"""

    def test_counted_loop(self, counted_loop):
        """Test final registers, memory and the store trace"""
        state, trace = Oracle(counted_loop).run(fuel=1000)
        assert state.halted
        assert state.int_regs[3] == 12
        assert state.memory[DATA_BASE + 4 * 11] == 11
        assert len(trace) == 12
        assert trace[0] == StoreRecord(DATA_BASE, 0)
        # 3 setup + 12 * 4 loop body + halt
        assert state.committed_count == 3 + 12 * 4 + 1

    def test_fuel_exhausted(self, program_from):
        """Test that an endless loop runs out of fuel with its partial state"""
        program = program_from("spin: addi r1, r1, 1\nj spin\n")
        with pytest.raises(FuelExhaustedError) as excinfo:
            Oracle(program).run(fuel=10)
        assert excinfo.value.state.committed_count == 10
        assert excinfo.value.state.int_regs[1] == 5

    def test_fuel_must_be_positive(self, counted_loop):
        """Test fuel validation"""
        with pytest.raises(ValueError):
            Oracle(counted_loop).run(fuel=0)

    def test_trap(self, program_from):
        """Test that division by zero raises with the pc"""
        program = program_from("addi r1, r0, 3\ndiv r2, r1, r0\nhalt\n")
        with pytest.raises(TrapError) as excinfo:
            Oracle(program).run(fuel=10)
        assert excinfo.value.pc == program.base_address + 4

    def test_runaway(self, program_from):
        """Test that falling off the image is reported"""
        program = program_from("nop\n")
        with pytest.raises(RunawayError):
            Oracle(program).run(fuel=10)

    def test_r0_stays_zero(self, program_from):
        """Test that writes to r0 are discarded"""
        program = program_from("addi r0, r0, 5\nadd r1, r0, r0\nhalt\n")
        state, _ = Oracle(program).run(fuel=10)
        assert state.int_regs[0] == 0 and state.int_regs[1] == 0


class TestAdvance:
    """Test fast-skip"""

    def test_advance_then_run_matches_full_run(self, counted_loop):
        """Test that skipping and resuming yields the same final state"""
        full, _ = Oracle(counted_loop).run(fuel=1000)
        oracle = Oracle(counted_loop)
        state = oracle.initial_state()
        assert oracle.advance(state, 17) == 17
        resumed, _ = oracle.run(fuel=1000, state=state)
        assert Oracle.diff(full, resumed) == []
        assert resumed.committed_count == full.committed_count

    def test_advance_stops_at_halt(self, counted_loop):
        """Test that advance never runs past halt"""
        oracle = Oracle(counted_loop)
        state = oracle.initial_state()
        executed = oracle.advance(state, 10_000)
        assert state.halted
        assert executed == state.committed_count


class TestDiff:
    """Test state comparison"""

    def test_diff_lists_registers_and_memory(self):
        """Test the mismatch list"""
        a = ArchState(pc=0, memory={0x1000: 1})
        b = a.copy()
        b.int_regs[2] = 7
        b.fp_regs[1] = 9
        b.memory[0x1004] = 3
        mismatches = Oracle.diff(a, b)
        assert [m.location for m in mismatches] == ["r2", "f1", "mem[0x00001004]"]
        assert str(mismatches[0]) == "r2: expected 0, got 7"

    def test_missing_words_read_as_zero(self):
        """Test that an explicit zero equals an untouched word"""
        a = ArchState(pc=0, memory={0x1000: 0})
        b = ArchState(pc=0)
        assert Oracle.diff(a, b) == []


class TestTrace:
    """Test the committed-instruction trace"""

    def test_trace_lines(self, program_from):
        """Test one line per committed instruction"""
        program = program_from(".data\nv: .word 0\n.text\naddi r1, r0, 5\nsw r1, v(r0)\nhalt\n")
        sink = io.StringIO()
        Oracle(program, trace_file=sink).run(fuel=10)
        lines = sink.getvalue().splitlines()
        assert len(lines) == 3
        assert lines[0].endswith("addi r1=5")
        assert "mem[0x00001000]=5" in lines[1]
        assert isinstance(Mismatch("r1", 1, 2), Mismatch)
