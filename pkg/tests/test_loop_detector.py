"""Tests for loop detection, classification and nest selection"""
import pytest

from core.config import DsmtConfig
from core.events import ModeEventKind
from core.loop_detector import (
    LoopDetector, LoopQuality, LoopTableEntry, SipcWindow, classify, compute_sipc,
)

BRANCH, TARGET = 0x400020, 0x400010


@pytest.fixture
def detector():
    return LoopDetector(DsmtConfig(window_cycles=100), contexts=4)


def _measured(branch, target, sipc, pre=1.0):
    entry = LoopTableEntry(branch, target, sipc_history=sipc, pre_dsmt_ipc=pre)
    classify(entry)
    return entry


class TestObserveBranch:
    """Test loop recognition from committed branches"""

    def test_second_taken_instance_enters_pre_dsmt(self, detector):
        """Test that a loop is recognised on its second taken backward branch"""
        assert detector.observe_branch(BRANCH, TARGET, True) is None
        event = detector.observe_branch(BRANCH, TARGET, True)
        assert event.kind == ModeEventKind.ENTER_PRE_DSMT
        assert (event.branch_addr, event.target_addr) == (BRANCH, TARGET)
        entry = detector.entry(BRANCH)
        assert entry.loop_flag and entry.iter_count == 2

    def test_forward_branches_ignored(self, detector):
        """Test that taken forward branches never form loops"""
        for _ in range(3):
            assert detector.observe_branch(TARGET, BRANCH, True) is None
        assert detector.loops() == []

    def test_fall_through_signals_exit(self, detector):
        """Test that a not-taken loop branch ends the loop"""
        detector.observe_branch(BRANCH, TARGET, True)
        detector.observe_branch(BRANCH, TARGET, True)
        event = detector.observe_branch(BRANCH, TARGET, False)
        assert event.kind == ModeEventKind.LOOP_EXIT
        assert detector.entry(BRANCH).iter_count == 0

    def test_not_taken_unknown_branch(self, detector):
        """Test that an unrelated fall-through is silent"""
        assert detector.observe_branch(BRANCH, TARGET, False) is None

    def test_new_target_replaces_entry(self, detector):
        """Test that a different target restarts recognition"""
        detector.observe_branch(BRANCH, TARGET, True)
        assert detector.observe_branch(BRANCH, TARGET - 8, True) is None
        assert detector.entry(BRANCH).target_addr == TARGET - 8

    def test_bad_loop_never_reenters(self, detector):
        """Test that a Bad loop keeps running sequentially"""
        detector.observe_branch(BRANCH, TARGET, True)
        detector.entry(BRANCH).quality = LoopQuality.BAD
        assert detector.observe_branch(BRANCH, TARGET, True) is None

    def test_describe(self):
        """Test the loop label"""
        assert LoopTableEntry(BRANCH, TARGET).describe() == "0x00400010-0x00400020"


class TestClassification:
    """Test SIPC and the break-even rule"""

    def test_sipc_ratio(self):
        """Test a plain window"""
        assert compute_sipc(SipcWindow(300, 100, 10), run_length=8, contexts_available=4) == 3.0

    @pytest.mark.parametrize("iterations, run_length", [(3, 8), (10, 3)])
    def test_sipc_gating(self, iterations, run_length):
        """Test that too few iterations or too short iterations force zero"""
        window = SipcWindow(300, 100, iterations)
        assert compute_sipc(window, run_length, contexts_available=4, min_run_length=4) == 0.0

    def test_empty_window(self):
        """Test that a zero-cycle window is rejected"""
        with pytest.raises(ValueError):
            compute_sipc(SipcWindow(0, 0, 0), 8, 4)

    @pytest.mark.parametrize("sipc, pre, quality", [
        (2.0, 1.5, LoopQuality.GOOD),
        (1.5, 1.5, LoopQuality.GOOD),
        (1.0, 1.5, LoopQuality.BAD),
    ])
    def test_break_even(self, sipc, pre, quality):
        """Test the Good/Bad threshold including the tie"""
        assert classify(LoopTableEntry(BRANCH, TARGET, sipc_history=sipc, pre_dsmt_ipc=pre)) == quality

    def test_classify_unmeasured(self):
        """Test that classification needs both measurements"""
        with pytest.raises(ValueError):
            classify(LoopTableEntry(BRANCH, TARGET))


class TestNestSelect:
    """Test choosing one level of a loop nest"""

    def test_stack_tracks_enclosing_loops(self, detector):
        """Test push on an enclosing loop and reset on an unrelated one"""
        inner = LoopTableEntry(0x400020, 0x400010)
        outer = LoopTableEntry(0x400030, 0x400008)
        other = LoopTableEntry(0x400100, 0x400080)
        detector.nest_select(inner)
        assert detector.nest_select(outer) is outer
        assert detector.stack == [inner, outer]
        assert detector.nest_select(inner) is outer, "a contained loop leaves the stack alone"
        detector.nest_select(other)
        assert detector.stack == [other]

    def test_best_sipc_wins(self, detector):
        """Test that the level with the highest SIPC is kept and the rest discarded"""
        inner = _measured(0x400020, 0x400010, sipc=1.2)
        outer = _measured(0x400030, 0x400008, sipc=2.5)
        detector.stack = [inner, outer]
        assert detector.nest_select() is outer
        assert inner.discarded and not outer.discarded
        assert detector.selected is outer and detector.stack == [outer]

    def test_inner_wins_ties(self, detector):
        """Test tie-breaking toward the inner loop"""
        inner = _measured(0x400020, 0x400010, sipc=2.0)
        outer = _measured(0x400030, 0x400008, sipc=2.0)
        detector.stack = [inner, outer]
        assert detector.nest_select() is inner

    def test_bad_level_loses(self, detector):
        """Test that a Bad level never wins over an unmeasured one"""
        inner = _measured(0x400020, 0x400010, sipc=0.5, pre=1.0)
        outer = LoopTableEntry(0x400030, 0x400008)
        detector.stack = [inner, outer]
        assert detector.nest_select() is inner, "equal rank keeps the inner level"
        assert outer.discarded

    def test_empty_stack(self, detector):
        """Test selection with nothing active"""
        assert detector.nest_select() is None


class TestEpisodes:
    """Test measurement across an episode"""

    def test_measure_and_classify(self, detector):
        """Test pre-DSMT IPC, run length and SIPC over one episode"""
        entry = LoopTableEntry(BRANCH, TARGET)
        detector.start_episode(entry, cycle=100, committed=1000)
        detector.full_dsmt_started(cycle=150, committed=1100, iterations=2, pre_iterations=2)
        assert entry.pre_dsmt_ipc == 2.0 and entry.run_length == 50.0
        assert not detector.window_expired(200, iterations=5)
        assert detector.window_expired(250, iterations=5)
        assert detector.finish_measurement(cycle=250, committed=1400, iterations=12) is entry
        assert entry.sipc_history == 3.0
        assert entry.quality == LoopQuality.GOOD
        assert detector.finish_measurement(cycle=300, committed=1500, iterations=14) is None

    def test_window_closes_inside_the_loop(self):
        """Test that the window closes after enough full-DSMT iterations, well before the cycle cap"""
        detector = LoopDetector(DsmtConfig(window_iterations=8, window_cycles=10_000), contexts=4)
        entry = LoopTableEntry(BRANCH, TARGET)
        detector.start_episode(entry, cycle=0, committed=0)
        detector.full_dsmt_started(cycle=40, committed=40, iterations=2, pre_iterations=2)
        assert not detector.window_expired(100, iterations=9)
        assert detector.window_expired(101, iterations=10)
        detector.finish_measurement(cycle=101, committed=90, iterations=10)
        assert entry.quality == LoopQuality.BAD, "SIPC 50/61 is below the pre-DSMT IPC of 1.0"
        assert detector.should_abandon()
        assert not detector.window_expired(5_000, iterations=100), "a measured episode has no window"

    def test_second_episode_not_remeasured(self, detector):
        """Test that only the first episode of a loop is measured"""
        entry = LoopTableEntry(BRANCH, TARGET, sipc_history=2.0, pre_dsmt_ipc=1.0)
        detector.start_episode(entry, cycle=0, committed=0)
        assert not detector.episode.measure
        assert entry.episodes == 1

    def test_should_abandon(self, detector):
        """Test abandonment of a loop classified Bad"""
        entry = LoopTableEntry(BRANCH, TARGET)
        detector.start_episode(entry, cycle=0, committed=0)
        assert not detector.should_abandon()
        entry.quality = LoopQuality.BAD
        assert detector.should_abandon()
        detector.end_episode(cycle=10, committed=10, iterations=0)
        assert detector.active_entry is None and not detector.should_abandon()
