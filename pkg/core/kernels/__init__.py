"""Shipped benchmark kernels, one assembly listing per file."""

from pathlib import Path
from typing import List, Mapping, Optional

from ..assembler import assemble
from ..isa import Program

KERNEL_DIR = Path(__file__).parent


def list_kernels() -> List[str]:
    return sorted(path.stem for path in KERNEL_DIR.glob("*.asm"))


def kernel_path(name: str) -> Path:
    path = KERNEL_DIR / f"{name}.asm"
    if not name.isidentifier() or not path.is_file():
        raise FileNotFoundError(f"no shipped kernel named '{name}' (have: {', '.join(list_kernels())})")
    return path


def kernel_source(name: str) -> str:
    return kernel_path(name).read_text()


def load_kernel(name: str, defines: Optional[Mapping[str, int]] = None) -> Program:
    """Assemble a shipped kernel, optionally resizing it through ``.equ`` overrides."""
    return assemble(kernel_source(name), defines)
