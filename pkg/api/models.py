"""Pydantic models for API request/response validation."""

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, model_validator


class RunRequest(BaseModel):
    """One simulation: a shipped kernel or an uploaded program, plus config overrides."""
    kernel: Optional[str] = None
    program_id: Optional[str] = None
    defines: Dict[str, int] = Field(default_factory=dict)  # .equ overrides, shipped kernels only
    context_count: Optional[int] = None
    fetch_policy: Optional[str] = Field(default=None, pattern=r"^(icount2\.8m|ideal)$")
    settings: Dict[str, Any] = Field(default_factory=dict)  # dotted keys, e.g. dsmt.mdrt_entries

    @model_validator(mode="after")
    def _one_program(self) -> "RunRequest":
        if (self.kernel is None) == (self.program_id is None):
            raise ValueError("give exactly one of kernel or program_id")
        return self

    def overrides(self) -> Dict[str, Any]:
        return {
            **self.settings,
            "context_count": self.context_count,
            "fetch_policy": self.fetch_policy,
        }


class KernelInfo(BaseModel):
    name: str
    source_lines: int
    text_words: int
    data_words: int


class ProgramInfo(BaseModel):
    """An assembled program held in the cache."""
    program_id: str
    name: str
    text_words: int
    data_words: int


class CacheStats(BaseModel):
    """Cache statistics."""
    hits: int
    misses: int
    evictions: int
    program_count: int
    report_count: int


class SweepRequest(BaseModel):
    type: str = Field(pattern="^sweep$")
    runs: List[RunRequest]


class WebSocketMessage(BaseModel):
    """WebSocket message for sweep progress."""
    type: str  # 'run_complete', 'sweep_complete', 'error'
    index: Optional[int] = None
    data: Optional[Dict[str, Any]] = None
    error: Optional[str] = None
