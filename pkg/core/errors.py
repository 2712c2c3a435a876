"""Exception hierarchy shared by the assembler, oracle and detailed simulator."""

from typing import Any, List, Optional


class SimulatorError(Exception):
    """Base class for every error raised by the simulator library."""


class AssemblyError(SimulatorError, ValueError):
    """Assembly source could not be translated."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        self.message = message
        super().__init__(f"line {line_no}: {message}")


class DecodeError(SimulatorError):
    """A word does not encode any defined instruction."""

    def __init__(self, word: int, message: Optional[str] = None):
        self.word = word
        super().__init__(message or f"cannot decode word 0x{word:08x}")


class ImageFormatError(SimulatorError):
    """Binary program image is truncated or inconsistent."""


class RunawayError(SimulatorError):
    """Execution reached a pc outside the program image."""

    def __init__(self, pc: int):
        self.pc = pc
        super().__init__(f"pc 0x{pc:08x} is outside the program image")


class TrapError(SimulatorError):
    """An instruction trapped (integer division by zero)."""

    def __init__(self, pc: int, reason: str):
        self.pc = pc
        self.reason = reason
        super().__init__(f"trap at 0x{pc:08x}: {reason}")


class FuelExhaustedError(SimulatorError):
    """The oracle ran out of fuel before reaching halt.

    Attributes:
        state: Architectural state at the moment fuel ran out
        trace: Committed store trace up to that point
    """

    def __init__(self, state: Any, trace: List[Any]):
        self.state = state
        self.trace = trace
        super().__init__(f"fuel exhausted after {state.committed_count} instructions")


class ProtocolError(SimulatorError, RuntimeError):
    """Illegal thread-control transition."""


class DeadlockError(SimulatorError):
    """No context committed anything for too many cycles."""

    def __init__(self, cycle: int, idle_cycles: int):
        self.cycle = cycle
        super().__init__(f"no commit for {idle_cycles} cycles (cycle {cycle})")
