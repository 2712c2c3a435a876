"""DSMT simulator library shared between the CLI and FastAPI."""

from .assembler import assemble, assemble_file
from .config import SimConfig, build_config
from .harness import run_experiment, run_sweep
from .oracle import Oracle
from .processor import DsmtProcessor
from .report import SimReport, emit_report

__all__ = [
    'assemble', 'assemble_file', 'SimConfig', 'build_config', 'run_experiment', 'run_sweep',
    'Oracle', 'DsmtProcessor', 'SimReport', 'emit_report',
]
