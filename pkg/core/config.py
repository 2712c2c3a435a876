"""Simulator configuration.

Defaults reproduce the reference machine: 64-entry IQ/LSQ and 32-entry ROB per
context, 2K-entry 2-way BTB, 128KB L1 caches, 256KB L2, four data ports, two
8-wide fetch ports, four-wide issue per context.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator

from .isa import DEFAULT_LATENCIES, FuClass

logger = logging.getLogger(__name__)

CONTEXT_COUNTS = (1, 2, 4, 8)

# Short names accepted in config files, sweep files and the API.
KEY_ALIASES = {
    "contexts": "context_count",
    "policy": "fetch_policy",
    "strict_lbit_squash": "dsmt.strict_lbit_squash",
    "mdrt_entries": "dsmt.mdrt_entries",
}


class FunctionalUnitConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    count: int = Field(ge=1)
    rs: int = Field(ge=1)
    pipelined: bool = True


def _default_units() -> Dict[FuClass, FunctionalUnitConfig]:
    return {
        FuClass.INT_ALU: FunctionalUnitConfig(count=8, rs=8),
        FuClass.INT_MUL: FunctionalUnitConfig(count=2, rs=2),
        FuClass.INT_DIV: FunctionalUnitConfig(count=2, rs=4, pipelined=False),
        FuClass.FP_ADD: FunctionalUnitConfig(count=2, rs=4),
        FuClass.FP_DIV: FunctionalUnitConfig(count=2, rs=2, pipelined=False),
        FuClass.FP_MUL: FunctionalUnitConfig(count=2, rs=4),
        FuClass.LOAD_STORE: FunctionalUnitConfig(count=2, rs=4),
    }


class PipelineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    iq_size: int = Field(default=64, ge=1)
    lsq_size: int = Field(default=64, ge=1)
    rob_size: int = Field(default=32, ge=1)
    decode_queue_size: int = Field(default=16, ge=1)
    dispatch_width: int = Field(default=8, ge=1)
    issue_width: int = Field(default=4, ge=1)
    commit_width: int = Field(default=4, ge=1)
    fetch_ports: int = Field(default=2, ge=1)
    fetch_width: int = Field(default=8, ge=1)
    btb_entries: int = Field(default=2048, ge=2)
    btb_ways: int = Field(default=2, ge=1)
    units: Dict[FuClass, FunctionalUnitConfig] = Field(default_factory=_default_units)


class CacheConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    line_size: int = Field(default=32, ge=4)
    associativity: int = Field(default=2, ge=1)
    l1i_size: int = Field(default=128 * 1024, ge=64)
    l1d_size: int = Field(default=128 * 1024, ge=64)
    l2_size: int = Field(default=256 * 1024, ge=64)
    l1_latency: int = Field(default=1, ge=1)
    l2_latency: int = Field(default=6, ge=1)
    memory_latency: int = Field(default=40, ge=1)
    data_ports: int = Field(default=4, ge=1)


class DsmtConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mdrt_entries: int = Field(default=64, ge=1)
    pre_dsmt_iterations: int = Field(default=2, ge=1)
    clone_cost: int = Field(default=2, ge=0)
    lsst_threshold: int = Field(default=2, ge=0, le=3)
    lsst_initial_confidence: int = Field(default=1, ge=0, le=3)
    read_confidence_initial: int = Field(default=2, ge=0, le=3)
    min_run_length: int = Field(default=4, ge=0)
    window_iterations: int = Field(default=16, ge=1)
    window_cycles: int = Field(default=10_000, ge=1)
    strict_lbit_squash: bool = False


class SimConfig(BaseModel):
    """Complete machine and run configuration."""
    model_config = ConfigDict(extra="forbid")

    context_count: int = 4
    fetch_policy: str = Field(default="icount2.8m", pattern=r"^(icount2\.8m|ideal)$")
    fast_skip: int = Field(default=0, ge=0)
    max_cycles: int = Field(default=1_000_000, ge=1)
    oracle_fuel: int = Field(default=10_000_000, ge=1)
    deadlock_cycles: int = Field(default=20_000, ge=1)
    check_invariants: bool = False
    trace_path: Optional[str] = None

    pipeline: PipelineConfig = Field(default_factory=PipelineConfig)
    latencies: Dict[FuClass, int] = Field(default_factory=lambda: dict(DEFAULT_LATENCIES))
    cache: CacheConfig = Field(default_factory=CacheConfig)
    dsmt: DsmtConfig = Field(default_factory=DsmtConfig)

    @field_validator("context_count")
    @classmethod
    def _check_contexts(cls, value: int) -> int:
        if value not in CONTEXT_COUNTS:
            raise ValueError(f"context_count must be one of {CONTEXT_COUNTS}")
        return value

    @field_validator("latencies")
    @classmethod
    def _check_latencies(cls, value: Dict[FuClass, int]) -> Dict[FuClass, int]:
        missing = [fu.value for fu in FuClass if fu not in value]
        if missing:
            raise ValueError(f"missing latencies for {missing}")
        if any(v < 1 for v in value.values()):
            raise ValueError("latencies must be at least one cycle")
        return value

    @property
    def fetch_port_count(self) -> int:
        if self.fetch_policy == "ideal":
            return self.context_count
        return self.pipeline.fetch_ports

    @property
    def dsmt_enabled(self) -> bool:
        return self.context_count > 1


def parse_config_text(text: str) -> Dict[str, str]:
    """Parse flat ``key=value`` lines; ``#`` starts a comment."""
    values: Dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"config line {line_no}: expected key=value, got '{raw.strip()}'")
        values[key.strip()] = value.strip()
    return values


def load_config_file(path: Union[str, Path]) -> Dict[str, str]:
    values = parse_config_text(Path(path).read_text())
    logger.info(f"Loaded {len(values)} settings from {path}")
    return values


def _assign(target: Dict[str, Any], dotted_key: str, value: Any) -> None:
    key = KEY_ALIASES.get(dotted_key, dotted_key)
    parts = key.split(".")
    node = target
    for part in parts[:-1]:
        child = node.get(part)
        if not isinstance(child, dict):
            child = {}
            node[part] = child
        node = child
    node[parts[-1]] = value


def build_config(*layers: Optional[Mapping[str, Any]]) -> SimConfig:
    """Build a validated config from flat dotted-key layers, later layers winning.

    Raises:
        pydantic.ValidationError: on unknown keys or out-of-range values
    """
    data = SimConfig().model_dump(mode="json")
    for layer in layers:
        for key, value in (layer or {}).items():
            if value is not None:
                _assign(data, key, value)
    return SimConfig.model_validate(data)


def flatten_config(config: SimConfig) -> Iterable[Tuple[str, Any]]:
    """Yield the config as sorted dotted ``(key, value)`` pairs."""
    def walk(prefix: str, node: Any):
        if isinstance(node, dict):
            for key in sorted(node):
                yield from walk(f"{prefix}.{key}" if prefix else str(key), node[key])
        else:
            yield prefix, node

    yield from walk("", config.model_dump(mode="json"))
