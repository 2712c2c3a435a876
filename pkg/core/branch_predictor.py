"""Branch target buffer with 2-bit saturating counters.

A miss predicts not-taken; an entry is allocated the first time the branch
resolves taken. Sets are 2-way by default with LRU replacement.
"""

from dataclasses import dataclass
from typing import List, NamedTuple, Optional

from .counters import COUNTER_MAX, saturating_decrement, saturating_increment
from .isa import WORD_BYTES

TAKEN_THRESHOLD = 2
ALLOCATE_COUNTER = 2


@dataclass
class BranchPredictorEntry:
    tag: int
    target: int
    counter: int = ALLOCATE_COUNTER

    def __post_init__(self):
        if not 0 <= self.counter <= COUNTER_MAX:
            raise ValueError(f"counter {self.counter} out of range")

    @property
    def predicts_taken(self) -> bool:
        return self.counter >= TAKEN_THRESHOLD


class Prediction(NamedTuple):
    taken: bool
    target: Optional[int]


class BranchOutcome(NamedTuple):
    taken: bool
    target: int


class BranchTargetBuffer:
    def __init__(self, entries: int = 2048, ways: int = 2):
        if entries % ways:
            raise ValueError("entries must be a multiple of ways")
        self.ways = ways
        self.set_count = entries // ways
        self._sets: List[List[BranchPredictorEntry]] = [[] for _ in range(self.set_count)]
        self.lookups = 0
        self.hits = 0

    def _set_for(self, pc: int) -> List[BranchPredictorEntry]:
        return self._sets[(pc // WORD_BYTES) % self.set_count]

    def lookup(self, pc: int) -> Optional[BranchPredictorEntry]:
        for entry in self._set_for(pc):
            if entry.tag == pc:
                return entry
        return None

    def predict(self, pc: int) -> Prediction:
        self.lookups += 1
        entry = self.lookup(pc)
        if entry is None:
            return Prediction(False, None)
        self.hits += 1
        return Prediction(entry.predicts_taken, entry.target)

    def update(self, pc: int, outcome: BranchOutcome) -> None:
        ways = self._set_for(pc)
        entry = self.lookup(pc)
        if entry is None:
            if not outcome.taken:
                return
            if len(ways) >= self.ways:
                ways.pop(0)
            ways.append(BranchPredictorEntry(pc, outcome.target))
            return
        ways.remove(entry)
        ways.append(entry)
        if outcome.taken:
            entry.counter = saturating_increment(entry.counter)
            entry.target = outcome.target
        else:
            entry.counter = saturating_decrement(entry.counter)

    def predict_and_update(self, pc: int, outcome: Optional[BranchOutcome] = None) -> Prediction:
        """Predict ``pc``; when the resolved outcome is given, train on it afterwards."""
        prediction = self.predict(pc)
        if outcome is not None:
            self.update(pc, outcome)
        return prediction
