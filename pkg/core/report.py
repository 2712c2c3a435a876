"""Run statistics and their text, JSON and CSV renderings."""

import csv
import io
import logging
from collections import defaultdict
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

logger = logging.getLogger(__name__)

FLOAT_DIGITS = 6


def _round(value: float) -> float:
    return round(float(value), FLOAT_DIGITS)


class Verdict(str, Enum):
    PASS = "PASS"
    FAILED = "FAILED"
    INCOMPLETE = "INCOMPLETE"


class LoopRecord(BaseModel):
    """One row of the loop table."""
    loop: str
    branch_addr: int
    target_addr: int
    quality: str
    sipc: Optional[float] = None
    pre_dsmt_ipc: Optional[float] = None
    run_length: float = 0.0
    episodes: int = 0
    iterations: int = 0
    discarded: bool = False
    selected: bool = False

    @field_validator("sipc", "pre_dsmt_ipc", "run_length")
    @classmethod
    def _stable(cls, value: Optional[float]) -> Optional[float]:
        return None if value is None else _round(value)


class LsstRecord(BaseModel):
    reg: str
    stride: int
    base: int
    confidence: int = Field(ge=0, le=3)


class SimReport(BaseModel):
    """Everything a run produced, ready to serialise."""
    kernel: str
    verdict: Verdict
    verdict_detail: List[str] = Field(default_factory=list)

    context_count: int
    fetch_policy: str
    strict_lbit_squash: bool = False
    config: Dict[str, Any] = Field(default_factory=dict)

    fast_skipped: int = 0
    oracle_committed: int = 0
    cycles: int = 0
    committed: int = 0
    committed_dsmt: int = 0
    dsmt_fraction: float = 0.0
    ipc: float = 0.0

    clones: int = 0
    promotions: int = 0
    squashes: Dict[str, int] = Field(default_factory=dict)
    exits: Dict[str, int] = Field(default_factory=dict)

    lsst_predictions: int = 0
    lsst_accuracy: float = 0.0
    lsst: List[LsstRecord] = Field(default_factory=list)

    branches: int = 0
    mispredictions: int = 0
    misprediction_rate: float = 0.0

    port_histogram: List[int] = Field(default_factory=list)
    port_utilization: float = 0.0
    mdrt_peak: int = 0
    mdrt_stall_cycles: int = 0
    sync_wait_cycles: int = 0

    loops: List[LoopRecord] = Field(default_factory=list)
    selected_loop: Optional[str] = None
    elapsed_seconds: Optional[float] = Field(default=None, exclude=True)

    @field_validator("dsmt_fraction", "ipc", "lsst_accuracy", "misprediction_rate", "port_utilization")
    @classmethod
    def _stable(cls, value: float) -> float:
        return _round(value)

    @model_validator(mode="after")
    def _check_counts(self) -> "SimReport":
        if self.committed_dsmt > self.committed:
            raise ValueError(f"committed_dsmt {self.committed_dsmt} exceeds committed {self.committed}")
        for name in ("dsmt_fraction", "lsst_accuracy", "misprediction_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} is not a fraction")
        return self

    @property
    def passed(self) -> bool:
        return self.verdict == Verdict.PASS

    @property
    def total_squashes(self) -> int:
        return sum(self.squashes.values())


# -- serialisation ----------------------------------------------------------

CSV_COLUMNS: Tuple[str, ...] = (
    "kernel", "context_count", "fetch_policy", "strict_lbit_squash", "verdict",
    "fast_skipped", "cycles", "committed", "committed_dsmt", "dsmt_fraction", "ipc",
    "clones", "promotions",
    "squash_RegisterEarlyRead", "squash_MemoryEarlyRead", "squash_LsstMispredict",
    "squash_ControlMispeculation",
    "lsst_accuracy", "misprediction_rate", "port_utilization",
    "mdrt_peak", "mdrt_stall_cycles", "sync_wait_cycles", "selected_loop",
)


def csv_header() -> str:
    return ",".join(CSV_COLUMNS)


def _csv_values(report: SimReport) -> List[Any]:
    row = report.model_dump(mode="json")
    for reason, count in report.squashes.items():
        row[f"squash_{reason}"] = count
    values = []
    for column in CSV_COLUMNS:
        value = row.get(column, 0)
        if value is None:
            value = ""
        elif isinstance(value, bool):
            value = str(value).lower()
        values.append(value)
    return values


def _csv_row(report: SimReport) -> str:
    buffer = io.StringIO()
    csv.writer(buffer, lineterminator="").writerow(_csv_values(report))
    return buffer.getvalue()


def _text(report: SimReport) -> str:
    lines = [
        f"kernel: {report.kernel}",
        f"verdict: {report.verdict.value}",
    ]
    lines.extend(f"  {detail}" for detail in report.verdict_detail)
    lines += [
        f"contexts: {report.context_count}  fetch policy: {report.fetch_policy}  "
        f"strict L-bit squash: {str(report.strict_lbit_squash).lower()}",
        f"fast-skipped: {report.fast_skipped}",
        f"cycles: {report.cycles}",
        f"committed: {report.committed}",
        f"committed in DSMT mode: {report.committed_dsmt} ({report.dsmt_fraction:.6f})",
        f"IPC: {report.ipc:.6f}",
        f"clones: {report.clones}  promotions: {report.promotions}",
        "squashes: " + ", ".join(f"{reason}={count}" for reason, count in report.squashes.items()),
        "DSMT exits: " + ", ".join(f"{reason}={count}" for reason, count in report.exits.items()),
        f"LSST: {report.lsst_predictions} predictions, accuracy {report.lsst_accuracy:.6f}",
    ]
    for entry in report.lsst:
        lines.append(f"  {entry.reg:>4} stride {entry.stride:>6} base {entry.base:>12} conf {entry.confidence}")
    lines += [
        f"branches: {report.branches}  mispredicted: {report.mispredictions} "
        f"({report.misprediction_rate:.6f})",
        f"data ports: {report.port_utilization:.6f} grants/cycle  histogram {report.port_histogram}",
        f"MDRT: peak {report.mdrt_peak} entries, {report.mdrt_stall_cycles} full stalls",
        f"synchronisation wait: {report.sync_wait_cycles} context-cycles",
        f"selected loop: {report.selected_loop or '-'}",
    ]
    if report.loops:
        lines.append("loops:")
        lines.append(f"  {'range':<23} {'quality':<8} {'SIPC':>10} {'pre IPC':>10} {'run len':>8} "
                     f"{'episodes':>8} {'iters':>8}")
        for loop in report.loops:
            sipc = "-" if loop.sipc is None else f"{loop.sipc:.6f}"
            pre = "-" if loop.pre_dsmt_ipc is None else f"{loop.pre_dsmt_ipc:.6f}"
            flags = " selected" if loop.selected else (" discarded" if loop.discarded else "")
            lines.append(f"  {loop.loop:<23} {loop.quality:<8} {sipc:>10} {pre:>10} {loop.run_length:>8.2f} "
                         f"{loop.episodes:>8} {loop.iterations:>8}{flags}")
    return "\n".join(lines) + "\n"


def emit_report(report: SimReport, fmt: str = "text") -> str:
    """Serialise a report; the same report always yields the same string.

    Args:
        report: Report to render
        fmt: ``text``, ``json`` or ``csv`` (a single data row, no header)
    """
    if fmt == "text":
        return _text(report)
    if fmt == "json":
        return report.model_dump_json(indent=2) + "\n"
    if fmt in ("csv", "csv-row"):
        return _csv_row(report) + "\n"
    raise ValueError(f"unknown report format '{fmt}'")


# -- sweep summary ----------------------------------------------------------

class SummaryRow(BaseModel):
    kernel: str
    fetch_policy: str
    context_count: int
    ipc: float
    speedup: Optional[float] = None
    verdict: Verdict


class SweepSummary(BaseModel):
    rows: List[SummaryRow]
    geomean_ipc: Dict[str, float]
    geomean_speedup: Dict[str, float]


def _geomean(values: Sequence[float]) -> float:
    positive = np.array([v for v in values if v > 0], dtype=np.float64)
    if positive.size == 0:
        return 0.0
    return _round(float(np.exp(np.log(positive).mean())))


def summarize(reports: Sequence[SimReport]) -> SweepSummary:
    """Speedup over the single-context run of the same kernel and policy, plus geometric means.

    Means are keyed ``"<policy>/<contexts>"``.
    """
    baseline: Dict[Tuple[str, str], float] = {}
    for report in reports:
        if report.context_count == 1:
            baseline[(report.kernel, report.fetch_policy)] = report.ipc

    rows = []
    ipcs: Dict[str, List[float]] = defaultdict(list)
    speedups: Dict[str, List[float]] = defaultdict(list)
    for report in reports:
        base = baseline.get((report.kernel, report.fetch_policy))
        speedup = _round(report.ipc / base) if base else None
        rows.append(SummaryRow(kernel=report.kernel, fetch_policy=report.fetch_policy,
                               context_count=report.context_count, ipc=report.ipc,
                               speedup=speedup, verdict=report.verdict))
        key = f"{report.fetch_policy}/{report.context_count}"
        ipcs[key].append(report.ipc)
        if speedup is not None:
            speedups[key].append(speedup)

    return SweepSummary(
        rows=rows,
        geomean_ipc={key: _geomean(values) for key, values in sorted(ipcs.items())},
        geomean_speedup={key: _geomean(values) for key, values in sorted(speedups.items())},
    )


def format_summary(summary: SweepSummary) -> str:
    lines = [f"{'kernel':<18} {'policy':<11} {'ctx':>3} {'IPC':>10} {'speedup':>9}  verdict"]
    for row in summary.rows:
        speedup = "-" if row.speedup is None else f"{row.speedup:.3f}"
        lines.append(f"{row.kernel:<18} {row.fetch_policy:<11} {row.context_count:>3} "
                     f"{row.ipc:>10.6f} {speedup:>9}  {row.verdict.value}")
    if summary.geomean_ipc:
        lines.append("geometric means:")
        for key, value in summary.geomean_ipc.items():
            speedup = summary.geomean_speedup.get(key)
            extra = f"  speedup {speedup:.3f}" if speedup is not None else ""
            lines.append(f"  {key:<16} IPC {value:.6f}{extra}")
    return "\n".join(lines) + "\n"
