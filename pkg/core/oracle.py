"""Sequential in-order interpreter: fast-skip engine and golden model."""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, TextIO, Tuple

from .errors import FuelExhaustedError, TrapError
from .isa import FP_BASE, REGISTER_COUNT, Program, evaluate, register_name

logger = logging.getLogger(__name__)


class StoreRecord(NamedTuple):
    address: int
    value: int


@dataclass
class ArchState:
    """Architectural state of a single thread of execution."""
    pc: int
    int_regs: List[int] = field(default_factory=lambda: [0] * REGISTER_COUNT)
    fp_regs: List[int] = field(default_factory=lambda: [0] * REGISTER_COUNT)
    memory: Dict[int, int] = field(default_factory=dict)
    halted: bool = False
    committed_count: int = 0

    def read(self, reg: int) -> int:
        if reg >= FP_BASE:
            return self.fp_regs[reg - FP_BASE]
        return self.int_regs[reg] if reg else 0

    def write(self, reg: int, value: int) -> None:
        if reg >= FP_BASE:
            self.fp_regs[reg - FP_BASE] = value
        elif reg:
            self.int_regs[reg] = value

    def load(self, address: int) -> int:
        return self.memory.get(address, 0)

    def copy(self) -> "ArchState":
        return ArchState(self.pc, list(self.int_regs), list(self.fp_regs), dict(self.memory),
                         self.halted, self.committed_count)


@dataclass(frozen=True)
class Mismatch:
    location: str
    expected: int
    actual: int

    def __str__(self) -> str:
        return f"{self.location}: expected {self.expected}, got {self.actual}"


class Oracle:
    """In-order functional model of a program.

    ``step`` mutates and returns the state it is given; stores committed by
    the oracle accumulate in ``store_trace``.
    """

    def __init__(self, program: Program, trace_file: Optional[TextIO] = None):
        self.program = program
        self.trace_file = trace_file
        self.store_trace: List[StoreRecord] = []

    def initial_state(self) -> ArchState:
        return ArchState(pc=self.program.base_address, memory=dict(self.program.data))

    def step(self, state: ArchState) -> ArchState:
        pc = state.pc
        inst = self.program.fetch(pc)
        values = [state.read(reg) for reg in inst.source_regs]
        outcome = evaluate(inst, pc, values)
        if outcome.trap:
            raise TrapError(pc, outcome.trap)

        dest = inst.dest_reg
        value = outcome.value
        if inst.spec.is_load:
            value = state.load(outcome.address)
        elif inst.spec.is_store:
            state.memory[outcome.address] = outcome.store_value
            self.store_trace.append(StoreRecord(outcome.address, outcome.store_value))
        if dest is not None:
            state.write(dest, value)

        if self.trace_file is not None:
            self._trace(pc, inst, dest, value, outcome)

        state.committed_count += 1
        if outcome.halt:
            state.halted = True
        else:
            state.pc = outcome.next_pc
        return state

    def _trace(self, pc, inst, dest, value, outcome) -> None:
        if dest is not None:
            effect = f"{register_name(dest)}={value}"
        elif inst.spec.is_store:
            effect = f"mem[0x{outcome.address:08x}]={outcome.store_value}"
        else:
            effect = "-"
        self.trace_file.write(f"0x{pc:08x} {inst.mnemonic} {effect}\n")

    def advance(self, state: ArchState, count: int) -> int:
        """Execute up to ``count`` instructions, stopping early at halt."""
        executed = 0
        while executed < count and not state.halted:
            self.step(state)
            executed += 1
        return executed

    def run(self, fuel: int, state: Optional[ArchState] = None) -> Tuple[ArchState, List[StoreRecord]]:
        """Run to halt.

        Raises:
            FuelExhaustedError: if ``fuel`` instructions execute without a halt
        """
        if fuel <= 0:
            raise ValueError("fuel must be positive")
        state = state if state is not None else self.initial_state()
        self.advance(state, fuel)
        if not state.halted:
            raise FuelExhaustedError(state, list(self.store_trace))
        logger.debug(f"Oracle halted after {state.committed_count} instructions")
        return state, list(self.store_trace)

    @staticmethod
    def diff(expected: ArchState, actual: ArchState) -> List[Mismatch]:
        """Register and memory differences; untouched memory words read as zero."""
        mismatches = []
        for index in range(1, REGISTER_COUNT):
            if expected.int_regs[index] != actual.int_regs[index]:
                mismatches.append(Mismatch(f"r{index}", expected.int_regs[index], actual.int_regs[index]))
        for index in range(REGISTER_COUNT):
            if expected.fp_regs[index] != actual.fp_regs[index]:
                mismatches.append(Mismatch(f"f{index}", expected.fp_regs[index], actual.fp_regs[index]))
        for address in sorted(set(expected.memory) | set(actual.memory)):
            want, got = expected.load(address), actual.load(address)
            if want != got:
                mismatches.append(Mismatch(f"mem[0x{address:08x}]", want, got))
        return mismatches
