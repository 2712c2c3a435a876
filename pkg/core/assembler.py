"""Two-pass assembler and binary image codec.

Syntax, one statement per line::

    .equ N 128              ; named constant (overridable via ``defines``)
    .data                   ; data section, starts at DATA_BASE unless given
    xs: .word 1, 2, 3
    ys: .space 16           ; 16 zero words
    .text
    loop: lw r4, 0(r1)      ; labels may share a line with an instruction
          addi r1, r1, 4
          bne r1, r2, loop
          halt

``;`` starts a comment anywhere, ``#`` starts a comment at the beginning of a
line and is otherwise accepted as an immediate prefix (``addi r3, r3, #4``).
"""

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Union

import numpy as np

from .errors import AssemblyError, ImageFormatError
from .isa import (
    DATA_BASE,
    IMM_MAX,
    IMM_MIN,
    MNEMONICS,
    OPSPECS,
    TEXT_BASE,
    WORD_BYTES,
    Format,
    Instruction,
    Program,
    encode,
    float_to_bits,
    to_int32,
)

logger = logging.getLogger(__name__)

_LABEL = re.compile(r"^([A-Za-z_][\w.]*)\s*:\s*(.*)$")
_MEMORY_OPERAND = re.compile(r"^(.*)\(\s*([rRfF]\d+)\s*\)$")
_TERM = r"(?:[A-Za-z_][\w.]*|0[xX][0-9a-fA-F]+|\d+)"
_EXPRESSION = re.compile(rf"^([+-]?)\s*({_TERM})\s*(?:([+-])\s*({_TERM}))?$")


@dataclass
class _Statement:
    line_no: int
    mnemonic: str
    operands: List[str]
    address: int
    section: str


def _strip_comment(line: str) -> str:
    line = line.split(";", 1)[0]
    if line.lstrip().startswith("#"):
        return ""
    return line.strip()


def _split_operands(text: str) -> List[str]:
    return [part.strip() for part in text.split(",")] if text.strip() else []


class _Assembler:
    def __init__(self, source: str, defines: Optional[Mapping[str, int]] = None):
        self.source = source
        self.defines = dict(defines or {})
        self.symbols: Dict[str, int] = {}
        self.labels: Dict[str, int] = {}
        self.statements: List[_Statement] = []

    # -- pass 1 -----------------------------------------------------------

    def collect(self) -> None:
        section = "text"
        text_pc = TEXT_BASE
        data_pc = DATA_BASE
        for line_no, raw in enumerate(self.source.splitlines(), start=1):
            line = _strip_comment(raw)
            while line:
                match = _LABEL.match(line)
                if not match:
                    break
                name = match.group(1)
                if name in self.labels or name in self.symbols:
                    raise AssemblyError(line_no, f"duplicate symbol '{name}'")
                self.labels[name] = text_pc if section == "text" else data_pc
                line = match.group(2).strip()
            if not line:
                continue

            head, *tail = line.split(None, 1)
            mnemonic = head.lower()
            rest = tail[0].strip() if tail else ""

            if mnemonic == ".text":
                section = "text"
            elif mnemonic == ".data":
                section = "data"
                if rest:
                    data_pc = self._literal(rest, line_no)
                    if data_pc % WORD_BYTES:
                        raise AssemblyError(line_no, f"data address {rest} is not word aligned")
            elif mnemonic == ".equ":
                parts = rest.replace(",", " ").split()
                if len(parts) != 2:
                    raise AssemblyError(line_no, ".equ expects a name and a value")
                name, value = parts
                self.symbols[name] = self.defines.get(name, self._literal(value, line_no))
            elif mnemonic in (".word", ".float", ".space"):
                if section != "data":
                    raise AssemblyError(line_no, f"{mnemonic} is only allowed in the data section")
                statement = _Statement(line_no, mnemonic, _split_operands(rest), data_pc, section)
                if mnemonic == ".space":
                    if len(statement.operands) != 1:
                        raise AssemblyError(line_no, ".space expects one word count")
                    count = self._literal(statement.operands[0], line_no)
                else:
                    count = len(statement.operands)
                self.statements.append(statement)
                data_pc += count * WORD_BYTES
            elif mnemonic in MNEMONICS:
                if section != "text":
                    raise AssemblyError(line_no, f"instruction '{mnemonic}' in the data section")
                self.statements.append(_Statement(line_no, mnemonic, _split_operands(rest), text_pc, section))
                text_pc += WORD_BYTES
            else:
                raise AssemblyError(line_no, f"unknown mnemonic '{head}'")
        for name, value in self.defines.items():
            self.symbols.setdefault(name, value)
        self.text_end = text_pc

    def _literal(self, token: str, line_no: int) -> int:
        token = token.strip()
        if token in self.defines:
            return self.defines[token]
        if token in self.symbols:
            return self.symbols[token]
        try:
            return int(token, 0)
        except ValueError:
            raise AssemblyError(line_no, f"expected a number, got '{token}'") from None

    # -- pass 2 -----------------------------------------------------------

    def _term(self, token: str, line_no: int) -> int:
        if token[0].isdigit():
            try:
                return int(token, 0)
            except ValueError:
                return int(token, 10)
        if token in self.symbols:
            return self.symbols[token]
        if token in self.labels:
            return self.labels[token]
        raise AssemblyError(line_no, f"undefined label '{token}'")

    def expression(self, text: str, line_no: int) -> int:
        text = text.strip()
        if text.startswith("#"):
            text = text[1:].strip()
        match = _EXPRESSION.match(text)
        if not match:
            raise AssemblyError(line_no, f"malformed expression '{text}'")
        sign, first, op, second = match.groups()
        value = self._term(first, line_no)
        if sign == "-":
            value = -value
        if op:
            offset = self._term(second, line_no)
            value = value + offset if op == "+" else value - offset
        return value

    def register(self, text: str, is_fp: bool, line_no: int) -> int:
        text = text.strip().lower()
        prefix = "f" if is_fp else "r"
        if len(text) < 2 or text[0] != prefix or not text[1:].isdigit():
            kind = "FP" if is_fp else "integer"
            raise AssemblyError(line_no, f"expected {kind} register, got '{text}'")
        index = int(text[1:])
        if index >= 32:
            raise AssemblyError(line_no, f"register '{text}' does not exist")
        return index

    def immediate(self, text: str, line_no: int) -> int:
        value = self.expression(text, line_no)
        if not IMM_MIN <= value <= IMM_MAX:
            raise AssemblyError(line_no, f"immediate {value} out of 16-bit range")
        return value

    def branch_offset(self, text: str, pc: int, line_no: int) -> int:
        target = self.expression(text, line_no)
        if not TEXT_BASE <= target < self.text_end or target % WORD_BYTES:
            raise AssemblyError(line_no, f"branch target '{text}' is outside the text section")
        offset = (target - (pc + WORD_BYTES)) // WORD_BYTES
        if not IMM_MIN <= offset <= IMM_MAX:
            raise AssemblyError(line_no, f"branch offset {offset} out of 16-bit range")
        return offset

    def instruction(self, st: _Statement) -> Instruction:
        opcode = MNEMONICS[st.mnemonic]
        spec = OPSPECS[opcode]
        kinds = {name: is_fp for name, is_fp in spec.sources}
        if spec.dest:
            kinds[spec.dest] = spec.dest_fp
        ops = st.operands
        expected = {
            Format.NONE: 0, Format.R3: 3, Format.R2: 2, Format.IMM: 3, Format.LUI: 2,
            Format.MEM: 2, Format.BRANCH: 3, Format.JUMP: 1,
        }[spec.fmt]
        if len(ops) != expected:
            raise AssemblyError(st.line_no, f"{st.mnemonic} expects {expected} operands, got {len(ops)}")

        n = st.line_no
        fmt = spec.fmt
        if fmt is Format.NONE:
            return Instruction(opcode)
        if fmt is Format.R3:
            return Instruction(opcode, rd=self.register(ops[0], kinds["rd"], n),
                               rs=self.register(ops[1], kinds["rs"], n),
                               rt=self.register(ops[2], kinds["rt"], n))
        if fmt is Format.R2:
            return Instruction(opcode, rd=self.register(ops[0], kinds["rd"], n),
                               rs=self.register(ops[1], kinds["rs"], n))
        if fmt is Format.IMM:
            return Instruction(opcode, rt=self.register(ops[0], False, n),
                               rs=self.register(ops[1], False, n),
                               imm=self.immediate(ops[2], n))
        if fmt is Format.LUI:
            return Instruction(opcode, rt=self.register(ops[0], False, n), imm=self.immediate(ops[1], n))
        if fmt is Format.MEM:
            match = _MEMORY_OPERAND.match(ops[1])
            if not match:
                raise AssemblyError(n, f"expected imm(reg) operand, got '{ops[1]}'")
            offset_text = match.group(1).strip() or "0"
            return Instruction(opcode, rt=self.register(ops[0], kinds["rt"], n),
                               rs=self.register(match.group(2), False, n),
                               imm=self.immediate(offset_text, n))
        if fmt is Format.BRANCH:
            return Instruction(opcode, rs=self.register(ops[0], False, n),
                               rt=self.register(ops[1], False, n),
                               imm=self.branch_offset(ops[2], st.address, n))
        return Instruction(opcode, imm=self.branch_offset(ops[0], st.address, n))

    def data_words(self, st: _Statement) -> List[int]:
        if st.mnemonic == ".space":
            return [0] * self._literal(st.operands[0], st.line_no)
        if st.mnemonic == ".float":
            words = []
            for token in st.operands:
                try:
                    words.append(float_to_bits(float(token)))
                except ValueError:
                    raise AssemblyError(st.line_no, f"expected a float, got '{token}'") from None
            return words
        return [to_int32(self.expression(token, st.line_no)) for token in st.operands]

    def build(self) -> Program:
        self.collect()
        words: List[int] = []
        data: Dict[int, int] = {}
        data_addresses: List[int] = []
        for st in self.statements:
            if st.section == "text":
                words.append(encode(self.instruction(st)))
                continue
            for index, value in enumerate(self.data_words(st)):
                address = st.address + index * WORD_BYTES
                data_addresses.append(address)
                if value:
                    data[address] = value
        data_base = min(data_addresses) if data_addresses else DATA_BASE
        return Program(TEXT_BASE, tuple(words), dict(self.labels), data, data_base)


def assemble(source_text: str, defines: Optional[Mapping[str, int]] = None) -> Program:
    """Assemble a listing into a program image.

    Args:
        source_text: Assembly listing
        defines: Values that override ``.equ`` constants of the same name

    Returns:
        Program with text words, labels and initial data memory

    Raises:
        AssemblyError: with the offending line number
    """
    return _Assembler(source_text, defines).build()


def assemble_file(path: Union[str, Path], defines: Optional[Mapping[str, int]] = None) -> Program:
    return assemble(Path(path).read_text(), defines)


# -- binary images ----------------------------------------------------------

def encode_image(program: Program) -> bytes:
    """Serialise a program as little-endian words: header, text, data trailer."""
    parts: List[np.ndarray] = [
        np.array([program.base_address, len(program.words)], dtype="<u4"),
        np.array(program.words, dtype="<u4"),
    ]
    if program.data:
        first = min(program.data)
        last = max(program.data)
        count = (last - first) // WORD_BYTES + 1
        block = np.zeros(count, dtype="<u4")
        for address, value in program.data.items():
            block[(address - first) // WORD_BYTES] = value & 0xFFFFFFFF
        parts.append(np.array([first, count], dtype="<u4"))
        parts.append(block)
    return b"".join(part.tobytes() for part in parts)


def decode_image(blob: bytes) -> Program:
    if len(blob) % WORD_BYTES:
        raise ImageFormatError(f"image length {len(blob)} is not a multiple of {WORD_BYTES}")
    words = np.frombuffer(blob, dtype="<u4")
    if len(words) < 2:
        raise ImageFormatError("image is missing its header")
    base, count = int(words[0]), int(words[1])
    if len(words) < 2 + count:
        raise ImageFormatError(f"header announces {count} words, image holds {len(words) - 2}")
    text = tuple(int(w) for w in words[2:2 + count])
    rest = words[2 + count:]
    data: Dict[int, int] = {}
    data_base = DATA_BASE
    if len(rest):
        if len(rest) < 2:
            raise ImageFormatError("truncated data trailer")
        data_base, data_count = int(rest[0]), int(rest[1])
        if len(rest) != 2 + data_count:
            raise ImageFormatError(f"data trailer announces {data_count} words, image holds {len(rest) - 2}")
        for index, value in enumerate(rest[2:]):
            if value:
                data[data_base + index * WORD_BYTES] = to_int32(int(value))
    return Program(base, text, {}, data, data_base)


def write_image(program: Program, path: Union[str, Path]) -> int:
    blob = encode_image(program)
    Path(path).write_bytes(blob)
    logger.info(f"Wrote {len(program.words)} text words to {path}")
    return len(blob)


def read_image(path: Union[str, Path]) -> Program:
    return decode_image(Path(path).read_bytes())
