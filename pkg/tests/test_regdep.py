"""Tests for inter-thread register dependence resolution"""
import pytest

from core.events import SquashReason
from core.regdep import ReadConfidenceTable, ReadKind

REG = 5


@pytest.fixture
def rig(full_dsmt):
    """Four contexts in full DSMT: head 0, speculative 1..3"""
    tciu, _ = full_dsmt(4)
    return tciu


class TestLocalReads:
    """Test reads the context can satisfy itself"""

    def test_head_reads_its_own_value(self, rig):
        """Test that the non-speculative context never looks elsewhere"""
        rig.contexts[0].regs[REG].value = 11
        resolution = rig.regdep.read_register(0, REG)
        assert resolution.kind == ReadKind.OWN_VALUE and resolution.value == 11

    def test_r0(self, rig):
        """Test that r0 always reads zero"""
        assert rig.regdep.read_register(2, 0).value == 0

    def test_in_flight_producer(self, rig):
        """Test that a pending local producer is waited on by tag"""
        rig.contexts[2].regs[REG].busy_tag = 17
        resolution = rig.regdep.read_register(2, REG)
        assert resolution.kind == ReadKind.OWN_PENDING and resolution.tag == 17

    def test_own_committed_value(self, rig):
        """Test that a value committed this iteration is read locally"""
        rig.regdep.commit_write(2, REG, 99)
        resolution = rig.regdep.read_register(2, REG)
        assert resolution.kind == ReadKind.OWN_VALUE and resolution.value == 99


class TestLiveIns:
    """Test cross-thread resolution"""

    def test_value_from_nearest_writer(self, rig):
        """Test that the nearest predecessor that committed the register supplies it"""
        rig.regdep.commit_write(0, REG, 3)
        rig.regdep.commit_write(1, REG, 7)
        resolution = rig.regdep.read_register(2, REG)
        assert resolution.kind == ReadKind.FROM_PREDECESSOR
        assert resolution.value == 7 and resolution.source == 1
        cell = rig.contexts[2].regs[REG]
        assert cell.l_bit and cell.read_value == 7
        assert rig.regdep.cross_thread_reads == 1

    def test_reading_a_prediction(self, rig):
        """Test that a predicted register is taken as a live-in without a search"""
        rig.regdep.commit_write(1, REG, 3)
        cell = rig.contexts[2].regs[REG]
        cell.predicted, cell.value = True, 44
        resolution = rig.regdep.read_register(2, REG)
        assert resolution.kind == ReadKind.OWN_VALUE and resolution.value == 44
        assert cell.l_bit and cell.read_value == 44
        assert rig.regdep.cross_thread_reads == 0

    def test_search_reaches_the_head(self, rig):
        """Test the search past predecessors that did not write"""
        rig.regdep.commit_write(0, REG, 3)
        resolution = rig.regdep.read_register(3, REG)
        assert resolution.value == 3 and resolution.source == 0

    def test_clone_value_fallback(self, rig):
        """Test that nobody writing leaves the value copied at clone time"""
        rig.contexts[2].regs[REG].value = 42
        resolution = rig.regdep.read_register(2, REG)
        assert resolution.kind == ReadKind.OWN_VALUE and resolution.value == 42
        assert rig.contexts[2].regs[REG].l_bit

    def test_read_once_then_local(self, rig):
        """Test that a resolved live-in is not searched for again"""
        rig.regdep.commit_write(1, REG, 7)
        rig.regdep.read_register(2, REG)
        rig.regdep.commit_write(1, REG, 8)
        assert rig.regdep.resolve_live_in(2, REG).value == 7

    def test_level_one_waits_for_predecessor(self, rig):
        """Test that a D-anchored register stalls until the predecessor commits it"""
        rig.state.d_anchor[REG] = True
        assert rig.regdep.read_register(2, REG).kind == ReadKind.STALL
        assert rig.regdep.stalled_reads == 1
        rig.regdep.commit_write(1, REG, 4)
        resolution = rig.regdep.read_register(2, REG)
        assert resolution.kind == ReadKind.FROM_PREDECESSOR and resolution.value == 4

    def test_level_one_released_by_finished_predecessor(self, rig):
        """Test that a predecessor that finished its iteration no longer holds the read"""
        rig.state.d_anchor[REG] = True
        rig.contexts[1].j_bit = True
        assert rig.regdep.read_register(2, REG).kind != ReadKind.STALL

    def test_low_confidence_stalls(self, rig):
        """Test that an unreliable register waits for the predecessor to finish"""
        rig.regdep.confidence.counters[REG] = 1
        assert rig.regdep.read_register(2, REG).kind == ReadKind.STALL
        rig.contexts[1].j_bit = True
        assert rig.regdep.read_register(2, REG).kind != ReadKind.STALL

    def test_dependence_bit_on_anchored_read(self, rig):
        """Test that reading an R-anchored register before writing it sets D"""
        rig.state.r_anchor[REG] = True
        rig.regdep.commit_write(1, REG, 7)
        rig.regdep.read_register(2, REG)
        assert rig.contexts[2].regs[REG].d_bit

    def test_note_commit_reads(self, rig):
        """Test the commit-order D-bit rule"""
        rig.state.r_anchor[REG] = True
        rig.state.r_anchor[6] = True
        rig.regdep.commit_write(0, 6, 1)
        rig.regdep.note_commit_reads(0, [REG, 6, 0])
        cells = rig.contexts[0].regs
        assert cells[REG].d_bit and not cells[6].d_bit and not cells[0].d_bit


class TestCommitChecks:
    """Test early-read detection when earlier threads commit"""

    def test_stale_read_requests_squash(self, rig):
        """Test that a commit disagreeing with a recorded read squashes the reader"""
        rig.contexts[1].regs[REG].value = 1
        rig.regdep.read_register(1, REG)
        request = rig.regdep.commit_write(0, REG, 9)
        assert request.ctx == 1
        assert request.reason == SquashReason.REGISTER_EARLY_READ
        assert request.location == "r5"
        assert rig.regdep.confidence[REG] == 1

    def test_matching_read_survives(self, rig):
        """Test that an identical value keeps the reader"""
        rig.contexts[1].regs[REG].value = 9
        rig.regdep.read_register(1, REG)
        assert rig.regdep.commit_write(0, REG, 9) is None
        assert rig.regdep.confidence[REG] == 3

    def test_strict_mode_squashes_matching_read(self, full_dsmt):
        """Test the conservative L-bit policy"""
        tciu, _ = full_dsmt(4, strict_lbit_squash=True)
        tciu.contexts[1].regs[REG].value = 9
        tciu.regdep.read_register(1, REG)
        request = tciu.regdep.commit_write(0, REG, 9)
        assert request is not None and request.ctx == 1

    def test_intervening_writer_shields_later_readers(self, rig):
        """Test that the scan stops at a successor that produced the register"""
        rig.regdep.commit_write(1, REG, 5)
        rig.regdep.read_register(2, REG)
        assert rig.regdep.commit_write(0, REG, 9) is None

    def test_predicted_mismatch(self, rig):
        """Test that a wrong stride prediction is its own squash reason"""
        cell = rig.contexts[1].regs[REG]
        cell.l_bit, cell.predicted, cell.read_value = True, True, 7
        assert rig.regdep.commit_write(0, REG, 7) is None
        request = rig.regdep.commit_write(0, REG, 8)
        assert request.reason == SquashReason.LSST_MISPREDICT
        assert rig.lsst.predictions == 1 and rig.lsst.correct == 0
        assert not cell.predicted

    def test_unread_prediction_not_checked(self, rig):
        """Test that a prediction the iteration never read cannot squash it"""
        cell = rig.contexts[1].regs[REG]
        cell.predicted, cell.value = True, 7
        assert rig.regdep.commit_write(0, REG, 8) is None
        assert rig.lsst.predictions == 0

    def test_prediction_answers_only_to_immediate_predecessor(self, rig):
        """Test that an older writer two iterations back leaves a read prediction alone"""
        cell = rig.contexts[2].regs[REG]
        cell.l_bit, cell.predicted, cell.read_value = True, True, 7
        assert rig.regdep.commit_write(0, REG, 8) is None
        request = rig.regdep.commit_write(1, REG, 8)
        assert request.ctx == 2 and request.reason == SquashReason.LSST_MISPREDICT

    def test_no_checks_outside_dsmt(self, make_tciu):
        """Test that commits in sequential mode request nothing"""
        tciu, _ = make_tciu(2)
        assert tciu.regdep.commit_write(0, REG, 1) is None
        assert tciu.contexts[0].regs[REG].r_bit


class TestPromotionCheck:
    """Test the final live-in check before promotion"""

    def test_mismatch(self, rig):
        """Test a live-in that disagrees with the head's final value"""
        rig.contexts[0].regs[REG].value = 9
        cell = rig.contexts[1].regs[REG]
        cell.l_bit, cell.read_value = True, 7
        request = rig.regdep.verify_promotion(rig.contexts[0], rig.contexts[1])
        assert request.reason == SquashReason.REGISTER_EARLY_READ

    def test_match(self, rig):
        """Test that agreeing live-ins pass and reward confidence"""
        rig.contexts[0].regs[REG].value = 7
        cell = rig.contexts[1].regs[REG]
        cell.l_bit, cell.read_value = True, 7
        assert rig.regdep.verify_promotion(rig.contexts[0], rig.contexts[1]) is None
        assert rig.regdep.confidence[REG] == 3

    def test_predicted_outcome_recorded(self, rig):
        """Test that a checked prediction counts toward LSST accuracy"""
        rig.contexts[0].regs[REG].value = 7
        cell = rig.contexts[1].regs[REG]
        cell.l_bit, cell.predicted, cell.read_value = True, True, 7
        assert rig.regdep.verify_promotion(rig.contexts[0], rig.contexts[1]) is None
        assert rig.lsst.predictions == 1 and rig.lsst.correct == 1

    def test_unread_prediction_skipped(self, rig):
        """Test that promotion ignores a prediction the iteration never used"""
        rig.contexts[0].regs[REG].value = 9
        cell = rig.contexts[1].regs[REG]
        cell.predicted, cell.value = True, 7
        assert rig.regdep.verify_promotion(rig.contexts[0], rig.contexts[1]) is None
        assert rig.lsst.predictions == 0


class TestReadConfidenceTable:
    """Test the read confidence counters"""

    def test_counters_saturate(self):
        """Test both bounds and the threshold"""
        table = ReadConfidenceTable(size=2, initial=2)
        table.penalize(0)
        table.penalize(0)
        table.penalize(0)
        assert table[0] == 0 and not table.confident(0)
        for _ in range(5):
            table.reward(1)
        assert table[1] == 3 and table.confident(1)
