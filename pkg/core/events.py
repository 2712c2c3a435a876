"""Events exchanged between the pipeline, the loop detector and the TCIU."""

from dataclasses import dataclass
from enum import Enum


class SquashReason(str, Enum):
    REGISTER_EARLY_READ = "RegisterEarlyRead"
    MEMORY_EARLY_READ = "MemoryEarlyRead"
    LSST_MISPREDICT = "LsstMispredict"
    CONTROL_MISPECULATION = "ControlMispeculation"


class ExitReason(str, Enum):
    LOOP_EXIT = "LoopExit"
    CLASSIFIED_BAD = "ClassifiedBad"


class ModeEventKind(str, Enum):
    ENTER_PRE_DSMT = "EnterPreDsmt"
    LOOP_EXIT = "LoopExit"


@dataclass(frozen=True)
class SquashRequest:
    """Ask the TCIU to squash ``ctx`` and everything after it in ring order."""
    ctx: int
    reason: SquashReason
    location: str = ""


@dataclass(frozen=True)
class ModeEvent:
    kind: ModeEventKind
    branch_addr: int
    target_addr: int
