"""Tests for the branch target buffer and saturating counters"""
import pytest

from core.branch_predictor import BranchOutcome, BranchPredictorEntry, BranchTargetBuffer
from core.counters import COUNTER_MAX, COUNTER_MIN, saturating_decrement, saturating_increment

PC = 0x400020
TARGET = 0x400010


class TestCounters:
    """Test 2-bit saturation"""

    @pytest.mark.parametrize("value", range(COUNTER_MIN, COUNTER_MAX + 1))
    def test_counter_stays_in_range(self, value):
        """Test every state under both transitions"""
        up, down = saturating_increment(value), saturating_decrement(value)
        assert COUNTER_MIN <= up <= COUNTER_MAX
        assert COUNTER_MIN <= down <= COUNTER_MAX
        assert up == min(value + 1, 3) and down == max(value - 1, 0)

    def test_entry_rejects_bad_counter(self):
        """Test entry construction bounds"""
        with pytest.raises(ValueError):
            BranchPredictorEntry(tag=PC, target=TARGET, counter=4)


class TestBranchTargetBuffer:
    """Test prediction and training"""

    def test_miss_predicts_not_taken(self):
        """Test the cold prediction"""
        btb = BranchTargetBuffer()
        prediction = btb.predict(PC)
        assert not prediction.taken and prediction.target is None
        assert btb.lookups == 1 and btb.hits == 0

    def test_not_taken_does_not_allocate(self):
        """Test that only taken branches allocate entries"""
        btb = BranchTargetBuffer()
        btb.update(PC, BranchOutcome(False, PC + 4))
        assert btb.lookup(PC) is None

    def test_taken_allocates_weakly_taken(self):
        """Test allocation and the first prediction after it"""
        btb = BranchTargetBuffer()
        btb.update(PC, BranchOutcome(True, TARGET))
        entry = btb.lookup(PC)
        assert entry.counter == 2
        assert btb.predict(PC) == (True, TARGET)

    def test_hysteresis(self):
        """Test that one not-taken after saturation keeps predicting taken"""
        btb = BranchTargetBuffer()
        for _ in range(3):
            btb.update(PC, BranchOutcome(True, TARGET))
        assert btb.lookup(PC).counter == 3
        btb.update(PC, BranchOutcome(False, PC + 4))
        assert btb.predict(PC).taken, "strongly taken should survive one not-taken"
        btb.update(PC, BranchOutcome(False, PC + 4))
        assert not btb.predict(PC).taken

    def test_lru_replacement(self):
        """Test that the least recently used way is evicted"""
        btb = BranchTargetBuffer(entries=4, ways=2)
        a, b, c = 0x400000, 0x400008, 0x400010  # all map to set 0
        btb.update(a, BranchOutcome(True, TARGET))
        btb.update(b, BranchOutcome(True, TARGET))
        btb.update(a, BranchOutcome(True, TARGET))
        btb.update(c, BranchOutcome(True, TARGET))
        assert btb.lookup(b) is None
        assert btb.lookup(a) is not None and btb.lookup(c) is not None

    def test_predict_and_update(self):
        """Test that the prediction precedes training"""
        btb = BranchTargetBuffer()
        first = btb.predict_and_update(PC, BranchOutcome(True, TARGET))
        assert not first.taken
        assert btb.predict(PC).taken

    def test_geometry_validation(self):
        """Test that entries must divide into ways"""
        with pytest.raises(ValueError):
            BranchTargetBuffer(entries=5, ways=2)
