"""Instruction set: opcodes, binary encoding, functional-unit classes and semantics.

Every instruction is one 32-bit word laid out MIPS-I style::

    op:6 | rs:5 | rt:5 | rd:5 | 0:11      (register forms)
    op:6 | rs:5 | rt:5 | imm:16            (immediate, memory and branch forms)

Integer registers are r0..r31 (r0 reads as zero), FP registers f0..f31. Inside
the simulator both files share one index space: r<n> is n and f<n> is 32 + n.
FP registers and memory words hold IEEE-754 single bit patterns stored as
signed 32-bit integers, so value equality is bit equality.
"""

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import DecodeError, ImageFormatError, RunawayError

WORD_BYTES = 4
REGISTER_COUNT = 32
FP_BASE = 32
UNIFIED_REGISTERS = 64
IMM_MIN = -(1 << 15)
IMM_MAX = (1 << 15) - 1

TEXT_BASE = 0x00400000
DATA_BASE = 0x00001000


class Opcode(IntEnum):
    NOP = 0x00
    ADD = 0x01
    SUB = 0x02
    AND = 0x03
    OR = 0x04
    XOR = 0x05
    SLT = 0x06
    SLL = 0x07
    ADDI = 0x08
    SRL = 0x09
    SRA = 0x0A
    LUI = 0x0F
    MUL = 0x10
    DIV = 0x11
    REM = 0x12
    FADD = 0x18
    FSUB = 0x19
    FMUL = 0x1A
    FDIV = 0x1B
    CVTIF = 0x1C
    CVTFI = 0x1D
    LW = 0x20
    SW = 0x21
    FLW = 0x22
    FSW = 0x23
    BEQ = 0x28
    BNE = 0x29
    BLT = 0x2A
    BGE = 0x2B
    J = 0x30
    HALT = 0x3E


RESERVED_OPCODE = 0x3F


class FuClass(str, Enum):
    INT_ALU = "IntALU"
    INT_MUL = "IntMul"
    INT_DIV = "IntDiv"
    FP_ADD = "FPAdd"
    FP_MUL = "FPMul"
    FP_DIV = "FPDiv"
    LOAD_STORE = "LoadStore"


class Format(Enum):
    NONE = "none"      # nop, halt
    R3 = "r3"          # rd, rs, rt
    R2 = "r2"          # rd, rs
    IMM = "imm"        # rt, rs, imm
    LUI = "lui"        # rt, imm
    MEM = "mem"        # rt, imm(rs)
    BRANCH = "branch"  # rs, rt, offset
    JUMP = "jump"      # offset


@dataclass(frozen=True)
class OpSpec:
    """Static description of one opcode."""
    mnemonic: str
    fmt: Format
    fu: FuClass
    dest: Optional[str] = None
    dest_fp: bool = False
    sources: Tuple[Tuple[str, bool], ...] = ()
    is_load: bool = False
    is_store: bool = False

    @property
    def is_memory(self) -> bool:
        return self.is_load or self.is_store

    @property
    def is_control(self) -> bool:
        return self.fmt in (Format.BRANCH, Format.JUMP)


def _alu(name: str, fu: FuClass = FuClass.INT_ALU) -> OpSpec:
    return OpSpec(name, Format.R3, fu, "rd", False, (("rs", False), ("rt", False)))


def _fpu(name: str, fu: FuClass) -> OpSpec:
    return OpSpec(name, Format.R3, fu, "rd", True, (("rs", True), ("rt", True)))


def _imm(name: str) -> OpSpec:
    return OpSpec(name, Format.IMM, FuClass.INT_ALU, "rt", False, (("rs", False),))


def _branch(name: str) -> OpSpec:
    return OpSpec(name, Format.BRANCH, FuClass.INT_ALU, None, False, (("rs", False), ("rt", False)))


OPSPECS: Dict[Opcode, OpSpec] = {
    Opcode.NOP: OpSpec("nop", Format.NONE, FuClass.INT_ALU),
    Opcode.ADD: _alu("add"),
    Opcode.SUB: _alu("sub"),
    Opcode.AND: _alu("and"),
    Opcode.OR: _alu("or"),
    Opcode.XOR: _alu("xor"),
    Opcode.SLT: _alu("slt"),
    Opcode.SLL: _imm("sll"),
    Opcode.ADDI: _imm("addi"),
    Opcode.SRL: _imm("srl"),
    Opcode.SRA: _imm("sra"),
    Opcode.LUI: OpSpec("lui", Format.LUI, FuClass.INT_ALU, "rt"),
    Opcode.MUL: _alu("mul", FuClass.INT_MUL),
    Opcode.DIV: _alu("div", FuClass.INT_DIV),
    Opcode.REM: _alu("rem", FuClass.INT_DIV),
    Opcode.FADD: _fpu("fadd", FuClass.FP_ADD),
    Opcode.FSUB: _fpu("fsub", FuClass.FP_ADD),
    Opcode.FMUL: _fpu("fmul", FuClass.FP_MUL),
    Opcode.FDIV: _fpu("fdiv", FuClass.FP_DIV),
    Opcode.CVTIF: OpSpec("cvtif", Format.R2, FuClass.FP_ADD, "rd", True, (("rs", False),)),
    Opcode.CVTFI: OpSpec("cvtfi", Format.R2, FuClass.FP_ADD, "rd", False, (("rs", True),)),
    Opcode.LW: OpSpec("lw", Format.MEM, FuClass.LOAD_STORE, "rt", False, (("rs", False),), is_load=True),
    Opcode.SW: OpSpec("sw", Format.MEM, FuClass.LOAD_STORE, None, False,
                      (("rs", False), ("rt", False)), is_store=True),
    Opcode.FLW: OpSpec("flw", Format.MEM, FuClass.LOAD_STORE, "rt", True, (("rs", False),), is_load=True),
    Opcode.FSW: OpSpec("fsw", Format.MEM, FuClass.LOAD_STORE, None, False,
                       (("rs", False), ("rt", True)), is_store=True),
    Opcode.BEQ: _branch("beq"),
    Opcode.BNE: _branch("bne"),
    Opcode.BLT: _branch("blt"),
    Opcode.BGE: _branch("bge"),
    Opcode.J: OpSpec("j", Format.JUMP, FuClass.INT_ALU),
    Opcode.HALT: OpSpec("halt", Format.NONE, FuClass.INT_ALU),
}

MNEMONICS: Dict[str, Opcode] = {spec.mnemonic: op for op, spec in OPSPECS.items()}

# Which instruction fields each format uses; the rest must be zero.
FORMAT_FIELDS: Dict[Format, Tuple[str, ...]] = {
    Format.NONE: (),
    Format.R3: ("rd", "rs", "rt"),
    Format.R2: ("rd", "rs"),
    Format.IMM: ("rt", "rs", "imm"),
    Format.LUI: ("rt", "imm"),
    Format.MEM: ("rt", "rs", "imm"),
    Format.BRANCH: ("rs", "rt", "imm"),
    Format.JUMP: ("imm",),
}

DEFAULT_LATENCIES: Dict[FuClass, int] = {
    FuClass.INT_ALU: 1,
    FuClass.INT_MUL: 3,
    FuClass.INT_DIV: 12,
    FuClass.FP_ADD: 2,
    FuClass.FP_MUL: 4,
    FuClass.FP_DIV: 12,
    FuClass.LOAD_STORE: 1,  # address generation; cache latency is added for loads
}


def to_int32(value: int) -> int:
    """Wrap an arbitrary Python int to a signed 32-bit value."""
    value &= 0xFFFFFFFF
    return value - (1 << 32) if value & 0x80000000 else value


def bits_to_float(bits: int) -> np.float32:
    return np.int32(to_int32(bits)).view(np.float32)


def float_to_bits(value: float) -> int:
    return int(np.float32(value).view(np.int32))


def register_name(reg: int) -> str:
    return f"f{reg - FP_BASE}" if reg >= FP_BASE else f"r{reg}"


@dataclass(frozen=True)
class Instruction:
    """One decoded machine instruction; unused fields are always zero."""
    opcode: Opcode
    rd: int = 0
    rs: int = 0
    rt: int = 0
    imm: int = 0

    def __post_init__(self):
        if not isinstance(self.opcode, Opcode):
            object.__setattr__(self, "opcode", Opcode(self.opcode))
        for name in ("rd", "rs", "rt"):
            value = getattr(self, name)
            if not 0 <= value < REGISTER_COUNT:
                raise ValueError(f"{name}={value} is not a register index")
        if not IMM_MIN <= self.imm <= IMM_MAX:
            raise ValueError(f"immediate {self.imm} does not fit in 16 bits")
        used = FORMAT_FIELDS[self.spec.fmt]
        for name in ("rd", "rs", "rt", "imm"):
            if name not in used and getattr(self, name) != 0:
                raise ValueError(f"{self.spec.mnemonic} does not use field {name}")

    @property
    def spec(self) -> OpSpec:
        return OPSPECS[self.opcode]

    @property
    def mnemonic(self) -> str:
        return self.spec.mnemonic

    @property
    def fu_class(self) -> FuClass:
        return self.spec.fu

    @property
    def dest_reg(self) -> Optional[int]:
        """Unified destination register, or None (writes to r0 are dropped)."""
        spec = self.spec
        if spec.dest is None:
            return None
        index = getattr(self, spec.dest)
        if spec.dest_fp:
            return FP_BASE + index
        return index if index != 0 else None

    @property
    def source_regs(self) -> Tuple[int, ...]:
        """Unified source registers in operand order (r0 included)."""
        return tuple(
            FP_BASE + getattr(self, name) if is_fp else getattr(self, name)
            for name, is_fp in self.spec.sources
        )

    @property
    def is_stride_update(self) -> bool:
        """True for the ``addi rd, rd, #imm`` induction pattern."""
        return self.opcode == Opcode.ADDI and self.rt == self.rs and self.rt != 0

    def branch_target(self, pc: int) -> int:
        return pc + WORD_BYTES + self.imm * WORD_BYTES

    def __str__(self) -> str:
        spec = self.spec
        fmt = spec.fmt

        def reg(field_name: str, is_fp: bool) -> str:
            return f"{'f' if is_fp else 'r'}{getattr(self, field_name)}"

        if fmt is Format.NONE:
            return spec.mnemonic
        if fmt is Format.R3:
            fp = spec.dest_fp
            return f"{spec.mnemonic} {reg('rd', fp)}, {reg('rs', fp)}, {reg('rt', fp)}"
        if fmt is Format.R2:
            return f"{spec.mnemonic} {reg('rd', spec.dest_fp)}, {reg('rs', spec.sources[0][1])}"
        if fmt is Format.IMM:
            return f"{spec.mnemonic} r{self.rt}, r{self.rs}, {self.imm}"
        if fmt is Format.LUI:
            return f"lui r{self.rt}, {self.imm}"
        if fmt is Format.MEM:
            data_fp = spec.dest_fp or (spec.is_store and spec.sources[1][1])
            return f"{spec.mnemonic} {reg('rt', data_fp)}, {self.imm}(r{self.rs})"
        if fmt is Format.BRANCH:
            return f"{spec.mnemonic} r{self.rs}, r{self.rt}, {self.imm}"
        return f"j {self.imm}"


def encode(inst: Instruction) -> int:
    word = (int(inst.opcode) << 26) | (inst.rs << 21) | (inst.rt << 16)
    if inst.spec.fmt in (Format.R3, Format.R2):
        word |= inst.rd << 11
    else:
        word |= inst.imm & 0xFFFF
    return word


def decode(word: int) -> Instruction:
    """Decode a 32-bit word; fields the opcode does not use are ignored."""
    word &= 0xFFFFFFFF
    try:
        opcode = Opcode(word >> 26)
    except ValueError:
        raise DecodeError(word) from None
    fields = {
        "rs": (word >> 21) & 0x1F,
        "rt": (word >> 16) & 0x1F,
        "rd": (word >> 11) & 0x1F,
        "imm": to_int32(word << 16) >> 16,
    }
    used = FORMAT_FIELDS[OPSPECS[opcode].fmt]
    return Instruction(opcode, **{name: fields[name] for name in used})


def classify_fu(inst: Instruction,
                latencies: Optional[Mapping[FuClass, int]] = None) -> Tuple[FuClass, int]:
    """Functional-unit class and fixed execution latency of an instruction."""
    table = DEFAULT_LATENCIES if latencies is None else latencies
    return inst.fu_class, table[inst.fu_class]


@dataclass(frozen=True)
class Outcome:
    """Architectural effect of one instruction given its source values.

    Loads report only their address; the loaded value comes from memory.
    """
    next_pc: int
    value: Optional[int] = None
    address: Optional[int] = None
    store_value: Optional[int] = None
    trap: Optional[str] = None
    halt: bool = False


def effective_address(base: int, imm: int) -> int:
    return (base + imm) & 0xFFFFFFFC


def _divide(a: int, b: int) -> Tuple[int, int]:
    quotient = abs(a) // abs(b)
    if (a < 0) != (b < 0):
        quotient = -quotient
    return to_int32(quotient), to_int32(a - quotient * b)


def _fp(op: Opcode, a: int, b: int) -> int:
    x, y = bits_to_float(a), bits_to_float(b)
    with np.errstate(all="ignore"):
        if op == Opcode.FADD:
            result = x + y
        elif op == Opcode.FSUB:
            result = x - y
        elif op == Opcode.FMUL:
            result = x * y
        else:
            result = x / y
    return float_to_bits(result)


def _float_to_int(bits: int) -> int:
    value = float(bits_to_float(bits))
    if value != value:
        return 0
    if value >= 2 ** 31:
        return (1 << 31) - 1
    if value <= -(2 ** 31):
        return -(1 << 31)
    return int(value)


def evaluate(inst: Instruction, pc: int, values: Sequence[int]) -> Outcome:
    """Compute the effect of ``inst`` at ``pc`` from its source operand values."""
    op = inst.opcode
    fall_through = pc + WORD_BYTES
    a = values[0] if values else 0
    b = values[1] if len(values) > 1 else 0

    if op == Opcode.NOP:
        return Outcome(fall_through)
    if op == Opcode.HALT:
        return Outcome(pc, halt=True)
    if op == Opcode.ADD:
        return Outcome(fall_through, to_int32(a + b))
    if op == Opcode.SUB:
        return Outcome(fall_through, to_int32(a - b))
    if op == Opcode.AND:
        return Outcome(fall_through, to_int32(a & b))
    if op == Opcode.OR:
        return Outcome(fall_through, to_int32(a | b))
    if op == Opcode.XOR:
        return Outcome(fall_through, to_int32(a ^ b))
    if op == Opcode.SLT:
        return Outcome(fall_through, 1 if a < b else 0)
    if op == Opcode.ADDI:
        return Outcome(fall_through, to_int32(a + inst.imm))
    if op == Opcode.SLL:
        return Outcome(fall_through, to_int32(a << (inst.imm & 31)))
    if op == Opcode.SRL:
        return Outcome(fall_through, to_int32((a & 0xFFFFFFFF) >> (inst.imm & 31)))
    if op == Opcode.SRA:
        return Outcome(fall_through, a >> (inst.imm & 31))
    if op == Opcode.LUI:
        return Outcome(fall_through, to_int32(inst.imm << 16))
    if op == Opcode.MUL:
        return Outcome(fall_through, to_int32(a * b))
    if op in (Opcode.DIV, Opcode.REM):
        if b == 0:
            return Outcome(fall_through, trap="integer division by zero")
        quotient, remainder = _divide(a, b)
        return Outcome(fall_through, quotient if op == Opcode.DIV else remainder)
    if op in (Opcode.FADD, Opcode.FSUB, Opcode.FMUL, Opcode.FDIV):
        return Outcome(fall_through, _fp(op, a, b))
    if op == Opcode.CVTIF:
        return Outcome(fall_through, float_to_bits(np.float32(a)))
    if op == Opcode.CVTFI:
        return Outcome(fall_through, _float_to_int(a))
    if op in (Opcode.LW, Opcode.FLW):
        return Outcome(fall_through, address=effective_address(a, inst.imm))
    if op in (Opcode.SW, Opcode.FSW):
        return Outcome(fall_through, address=effective_address(a, inst.imm), store_value=b)
    if op == Opcode.J:
        return Outcome(inst.branch_target(pc))

    if op == Opcode.BEQ:
        taken = a == b
    elif op == Opcode.BNE:
        taken = a != b
    elif op == Opcode.BLT:
        taken = a < b
    else:
        taken = a >= b
    return Outcome(inst.branch_target(pc) if taken else fall_through)


@dataclass
class Program:
    """A loaded program image.

    ``data`` maps word addresses to their initial values; every other memory
    word starts at zero.
    """
    base_address: int
    words: Tuple[int, ...]
    labels: Dict[str, int] = field(default_factory=dict)
    data: Dict[int, int] = field(default_factory=dict)
    data_base: int = DATA_BASE
    instructions: Tuple[Instruction, ...] = field(init=False, repr=False)

    def __post_init__(self):
        if self.base_address % WORD_BYTES:
            raise ImageFormatError(f"base address 0x{self.base_address:x} is not word aligned")
        self.words = tuple(int(w) & 0xFFFFFFFF for w in self.words)
        self.instructions = tuple(decode(word) for word in self.words)
        for index, inst in enumerate(self.instructions):
            if inst.spec.is_control:
                pc = self.base_address + index * WORD_BYTES
                if not self.contains(inst.branch_target(pc)):
                    raise ImageFormatError(
                        f"{inst.mnemonic} at 0x{pc:08x} targets 0x{inst.branch_target(pc):08x} outside the image"
                    )

    @property
    def end_address(self) -> int:
        return self.base_address + len(self.words) * WORD_BYTES

    def contains(self, pc: int) -> bool:
        return self.base_address <= pc < self.end_address and pc % WORD_BYTES == 0

    def fetch(self, pc: int) -> Instruction:
        if not self.contains(pc):
            raise RunawayError(pc)
        return self.instructions[(pc - self.base_address) // WORD_BYTES]
