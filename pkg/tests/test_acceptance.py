"""End-to-end checks on the shipped kernel suite.

The unmarked class runs every kernel at a small size. ``slow`` runs the full
equivalence matrix; ``acceptance`` checks the qualitative behaviour of each
kernel at its shipped size.
"""
import itertools

import pytest

from core.config import build_config
from core.harness import run_experiment
from core.kernels import list_kernels, load_kernel
from core.report import Verdict, summarize

SMALL = {
    "vadd": {"N": 32},
    "dot": {"N": 32},
    "cond": {"N": 32},
    "first_diff": {"N": 32},
    "stride_irregular": {"N": 64},
    "matmul3": {"N": 4, "ROW": 16, "CELLS": 16},
}


def _run(kernel, defines=None, **settings):
    config = build_config({"check_invariants": True, "max_cycles": 5_000_000, **settings})
    return run_experiment(config, load_kernel(kernel, defines), kernel)


class TestKernelSuite:
    """Test every kernel at a reduced size"""

    def test_sizes_cover_suite(self):
        """Test that every shipped kernel has a reduced size"""
        assert sorted(SMALL) == list_kernels()

    @pytest.mark.parametrize("kernel", sorted(SMALL))
    @pytest.mark.parametrize("contexts", [1, 4])
    def test_matches_oracle(self, kernel, contexts):
        """Test oracle equivalence and the single-context degenerate case"""
        report = _run(kernel, SMALL[kernel], context_count=contexts)
        assert report.verdict == Verdict.PASS, report.verdict_detail
        assert report.committed == report.oracle_committed
        if contexts == 1:
            assert report.dsmt_fraction == 0.0 and report.clones == 0

    def test_report_is_deterministic(self):
        """Test that two runs give identical reports"""
        first = _run("cond", SMALL["cond"], context_count=4)
        second = _run("cond", SMALL["cond"], context_count=4)
        assert first.model_dump_json() == second.model_dump_json()

    def test_regular_strides_never_mispredict(self):
        """Test that clones of a loop with pure induction live-ins always get the right values"""
        report = _run("vadd", {"N": 64}, context_count=4)
        assert report.verdict == Verdict.PASS, report.verdict_detail
        assert report.lsst_predictions > 0
        assert report.squashes.get("LsstMispredict", 0) == 0, "the first clone must see the exact base"
        assert report.lsst_accuracy == 1.0

    def test_bad_loop_abandoned_in_first_episode(self):
        """Test that a loop measured Bad is left at once and never re-entered"""
        report = _run("stride_irregular", {"N": 256}, context_count=4, **{"dsmt.window_iterations": 8})
        assert report.verdict == Verdict.PASS, report.verdict_detail
        bad = [loop for loop in report.loops if loop.quality == "Bad"]
        assert len(bad) == 1 and bad[0].episodes == 1
        assert report.exits.get("ClassifiedBad", 0) == 1
        assert report.squashes.get("LsstMispredict", 0) == max(report.squashes.values())


@pytest.mark.slow
@pytest.mark.parametrize("kernel, contexts, policy, strict", list(itertools.product(
    sorted(SMALL), [1, 2, 4, 8], ["icount2.8m", "ideal"], [False, True],
)))
def test_equivalence_matrix(kernel, contexts, policy, strict):
    """Test every kernel under every machine variant"""
    report = _run(kernel, SMALL[kernel], context_count=contexts, fetch_policy=policy,
                  **{"dsmt.strict_lbit_squash": strict})
    assert report.verdict == Verdict.PASS, report.verdict_detail


@pytest.mark.acceptance
class TestBehaviour:
    """Test the qualitative effects each kernel is built to show"""

    def test_vadd_speedup(self):
        """Test that independent iterations scale with contexts"""
        ipc = {n: _run("vadd", context_count=n).ipc for n in (1, 2, 4)}
        assert ipc[1] <= ipc[2] <= ipc[4]
        assert ipc[4] / ipc[1] >= 1.3

    @pytest.mark.parametrize("kernel", ["vadd", "matmul3"])
    def test_dsmt_coverage(self, kernel):
        """Test that most work commits in full DSMT"""
        assert _run(kernel, context_count=4).dsmt_fraction >= 0.7

    def test_break_even_fallback(self):
        """Test that a loop that does not pay is classified Bad in its first episode and costs little"""
        single = _run("stride_irregular", context_count=1)
        report = _run("stride_irregular", context_count=8)
        assert report.verdict == Verdict.PASS
        bad = [loop for loop in report.loops if loop.quality == "Bad"]
        assert bad and all(loop.episodes == 1 for loop in bad), "Bad must be decided inside the first episode"
        assert report.exits.get("ClassifiedBad", 0) >= 1
        assert report.ipc >= 0.95 * single.ipc

    def test_lsst_on_regular_strides(self):
        """Test near-perfect stride prediction on vadd"""
        report = _run("vadd", context_count=4)
        assert report.lsst_accuracy >= 0.99
        assert report.lsst and all(entry.confidence == 3 for entry in report.lsst)

    def test_lsst_on_irregular_strides(self):
        """Test that mispredicted strides dominate the squashes of stride_irregular"""
        report = _run("stride_irregular", context_count=4)
        assert report.lsst_accuracy < 0.5
        assert report.squashes.get("LsstMispredict", 0) == max(report.squashes.values(), default=-1)

    @pytest.mark.parametrize("kernel", ["cond", "first_diff"])
    def test_squash_soundness(self, kernel):
        """Test that heavy misspeculation leaves no architectural residue"""
        report = _run(kernel, context_count=8)
        assert report.total_squashes > 0
        assert report.verdict == Verdict.PASS, report.verdict_detail

    def test_fetch_policy_parity(self):
        """Test that two fetch ports lose little against one port per context"""
        reports = [_run(kernel, context_count=n, fetch_policy=policy)
                   for kernel in list_kernels() for n in (2, 4, 8) for policy in ("icount2.8m", "ideal")]
        means = summarize(reports).geomean_ipc
        for n in (2, 4, 8):
            assert means[f"icount2.8m/{n}"] >= 0.9 * means[f"ideal/{n}"]

    @pytest.mark.parametrize("contexts", [4, 8])
    def test_nest_selection(self, contexts):
        """Test that one level of the matmul3 nest is selected and beats every measured level"""
        report = _run("matmul3", context_count=contexts)
        selected = [loop for loop in report.loops if loop.selected]
        assert len(selected) == 1
        assert report.selected_loop == selected[0].loop
        discarded = [loop for loop in report.loops if loop.discarded]
        assert discarded, "the other nest levels must have been measured and dropped"
        for loop in discarded:
            assert loop.sipc is not None, f"{loop.loop} was discarded without a measurement"
            assert selected[0].sipc > loop.sipc
