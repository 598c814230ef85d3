"""Minimal 32-bit fixed-width instruction set, assembler and disassembler.

Encoding (all instructions)::

    31      24 23   19 18   14 13    9 8        0
    +---------+-------+-------+-------+---------+
    | opcode  |  rd   |  rn   |  rm   |         |
    +---------+-------+-------+-------+---------+
                              |      imm14      |

``rm`` and ``imm`` overlap; each opcode uses one or the other.
"""
from __future__ import annotations

import enum
import json
import re
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

NUM_REGS = 31
IMM_BITS = 14
IMM_MASK = (1 << IMM_BITS) - 1


class Op(enum.IntEnum):
    NOP = 0x00
    HALT = 0x01
    TRIG = 0x02
    WAIT = 0x03
    MOVI = 0x10
    ADDI = 0x11
    SUBI = 0x12
    ADD = 0x13
    LDR = 0x20
    STR = 0x21
    B = 0x30
    CBNZ = 0x31
    IC_IALLU = 0x40
    DC_CIVAC = 0x41
    TLBI_ALL = 0x42
    AT = 0x43


# operand formats: d=rd, n=rn, m=rm, i=unsigned imm, s=signed word offset,
# M=memory operand "[rn, #imm]"
FORMATS = {
    Op.NOP: "", Op.HALT: "", Op.TRIG: "", Op.IC_IALLU: "", Op.TLBI_ALL: "",
    Op.WAIT: "i",
    Op.MOVI: "di",
    Op.ADDI: "dni", Op.SUBI: "dni",
    Op.ADD: "dnm",
    Op.LDR: "dM", Op.STR: "dM",
    Op.B: "s",
    Op.CBNZ: "ds",
    Op.DC_CIVAC: "n",
    Op.AT: "dn",
}

BRANCHES = (Op.B, Op.CBNZ)


@dataclass(frozen=True, slots=True)
class DecodedInstruction:
    opcode: Op
    rd: int = 0
    rn: int = 0
    rm: int = 0
    imm: int = 0

    def __str__(self) -> str:
        return disassemble_one(self)


@dataclass(frozen=True, slots=True)
class UndefinedInstruction:
    """Trap descriptor for a word that has no valid decoding."""
    word: int
    reason: str


class AssemblyError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source is not None or line is not None:
            where = f"{source or '<asm>'}:{line if line is not None else '?'}: "
        super().__init__(where + message)


def _sext(value: int, bits: int) -> int:
    value &= (1 << bits) - 1
    return value - (1 << bits) if value & (1 << (bits - 1)) else value


def encode(ins: DecodedInstruction) -> int:
    fmt = FORMATS[ins.opcode]
    for name in ("rd", "rn", "rm"):
        r = getattr(ins, name)
        if not 0 <= r < NUM_REGS:
            raise ValueError(f"{name}={r} out of range")
    word = int(ins.opcode) << 24
    if "d" in fmt:
        word |= ins.rd << 19
    if "n" in fmt or "M" in fmt:
        word |= ins.rn << 14
    if "m" in fmt:
        word |= ins.rm << 9
    if "s" in fmt:
        if not -(1 << (IMM_BITS - 1)) <= ins.imm < (1 << (IMM_BITS - 1)):
            raise ValueError(f"branch offset {ins.imm} out of range")
        word |= ins.imm & IMM_MASK
    elif "i" in fmt or "M" in fmt:
        if not 0 <= ins.imm <= IMM_MASK:
            raise ValueError(f"immediate {ins.imm} out of range")
        word |= ins.imm
    return word


@lru_cache(maxsize=4096)
def decode(word: int) -> DecodedInstruction | UndefinedInstruction:
    """Decode a 32-bit word; never raises."""
    word &= 0xFFFFFFFF
    try:
        op = Op(word >> 24)
    except ValueError:
        return UndefinedInstruction(word, f"unknown opcode 0x{word >> 24:02x}")
    fmt = FORMATS[op]
    rd = (word >> 19) & 0x1F if "d" in fmt else 0
    rn = (word >> 14) & 0x1F if ("n" in fmt or "M" in fmt) else 0
    rm = (word >> 9) & 0x1F if "m" in fmt else 0
    if NUM_REGS in (rd, rn, rm):
        return UndefinedInstruction(word, "register index 31")
    if "s" in fmt:
        imm = _sext(word, IMM_BITS)
    elif "i" in fmt or "M" in fmt:
        imm = word & IMM_MASK
    else:
        imm = 0
    return DecodedInstruction(op, rd, rn, rm, imm)


def disassemble_one(ins: DecodedInstruction | UndefinedInstruction) -> str:
    if isinstance(ins, UndefinedInstruction):
        return f".word 0x{ins.word:08x}"
    name = ins.opcode.name.lower()
    fmt = FORMATS[ins.opcode]
    args = []
    for f in fmt:
        if f == "d":
            args.append(f"x{ins.rd}")
        elif f == "n":
            args.append(f"x{ins.rn}")
        elif f == "m":
            args.append(f"x{ins.rm}")
        elif f in "is":
            args.append(f"#{ins.imm}")
        elif f == "M":
            args.append(f"[x{ins.rn}, #{ins.imm}]" if ins.imm else f"[x{ins.rn}]")
    return f"{name} {', '.join(args)}" if args else name


def disassemble(words, base: int = 0) -> list[str]:
    return [disassemble_one(decode(w)) for w in words]


@dataclass
class ProgramImage:
    base: int
    words: list[int]
    entry: int | None = None
    labels: dict[str, int] | None = None

    def __post_init__(self):
        if self.entry is None:
            self.entry = self.base
        if self.labels is None:
            self.labels = {}

    @property
    def end(self) -> int:
        return self.base + 4 * len(self.words)

    def to_bytes(self) -> bytes:
        return struct.pack(f"<{len(self.words)}I", *self.words)

    def word_at(self, addr: int) -> int:
        return self.words[(addr - self.base) // 4]

    def save(self, path) -> tuple[Path, Path]:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        sidecar = path.with_suffix(".json")
        sidecar.write_text(json.dumps({"base": self.base, "entry": self.entry}, indent=2) + "\n")
        return path, sidecar

    @classmethod
    def load(cls, path) -> ProgramImage:
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        raw = path.read_bytes()
        if len(raw) % 4:
            raise ValueError(f"{path}: size {len(raw)} not a multiple of 4")
        words = list(struct.unpack(f"<{len(raw) // 4}I", raw))
        return cls(int(meta["base"]), words, int(meta.get("entry", meta["base"])))


# -- assembler ---------------------------------------------------------------

_LABEL = re.compile(r"^([A-Za-z_][\w.]*):")
_REG = re.compile(r"^x(\d+)$", re.IGNORECASE)
_MEM = re.compile(r"^\[\s*(x\d+)\s*(?:,\s*(#?[-+]?\w+))?\s*\]$", re.IGNORECASE)


def _parse_int(text: str) -> int:
    text = text.strip()
    if text.startswith("#"):
        text = text[1:]
    return int(text, 0)


def _split_operands(text: str) -> list[str]:
    out, depth, cur = [], 0, ""
    for ch in text:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == "," and depth == 0:
            out.append(cur.strip())
            cur = ""
        else:
            cur += ch
    if cur.strip():
        out.append(cur.strip())
    return out


def _reg(text: str, lineno: int, source) -> int:
    m = _REG.match(text.strip())
    if not m or int(m.group(1)) >= NUM_REGS:
        raise AssemblyError(f"bad register {text!r}", lineno, source)
    return int(m.group(1))


def assemble(source: str, base: int = 0, name: str | None = None) -> ProgramImage:
    """Two-pass assembler. Gaps left by ``.org`` are filled with NOPs."""
    # pass 1: addresses
    items = []  # (addr, lineno, mnemonic, operand text) or (addr, lineno, ".word", value)
    labels: dict[str, int] = {}
    addr = None
    origin = None
    for lineno, raw in enumerate(source.splitlines(), 1):
        line = raw.split(";", 1)[0].strip()
        while True:
            m = _LABEL.match(line)
            if not m:
                break
            label = m.group(1)
            if label in labels:
                raise AssemblyError(f"duplicate label {label!r}", lineno, name)
            if addr is None:
                addr = origin = base
            labels[label] = addr
            line = line[m.end():].strip()
        if not line:
            continue
        parts = line.split(None, 1)
        mnem = parts[0].lower()
        rest = parts[1] if len(parts) > 1 else ""
        if mnem == ".org":
            try:
                new = _parse_int(rest)
            except ValueError:
                raise AssemblyError(f"bad .org operand {rest!r}", lineno, name) from None
            if new % 4:
                raise AssemblyError(".org address must be word aligned", lineno, name)
            if addr is not None and new < addr:
                raise AssemblyError(f".org 0x{new:x} moves backwards", lineno, name)
            if addr is None:
                origin = new
            addr = new
            continue
        if addr is None:
            addr = origin = base
        items.append((addr, lineno, mnem, rest))
        addr += 4
    if origin is None:
        origin = base
    # pass 2: encode
    end = max([a + 4 for a, *_ in items], default=origin)
    words = [0] * ((end - origin) // 4)
    for a, lineno, mnem, rest in items:
        words[(a - origin) // 4] = _encode_line(a, lineno, mnem, rest, labels, name)
    entry = labels.get("start", origin)
    return ProgramImage(origin, words, entry, labels)


def _encode_line(addr, lineno, mnem, rest, labels, source) -> int:
    if mnem == ".word":
        try:
            return _parse_int(rest) & 0xFFFFFFFF
        except ValueError:
            raise AssemblyError(f"bad .word operand {rest!r}", lineno, source) from None
    try:
        op = Op[mnem.upper().replace(" ", "_")]
    except KeyError:
        raise AssemblyError(f"unknown mnemonic {mnem!r}", lineno, source) from None
    fmt = FORMATS[op]
    ops = _split_operands(rest)
    if len(ops) != len(fmt):
        raise AssemblyError(f"{mnem} expects {len(fmt)} operand(s), got {len(ops)}", lineno, source)
    fields = {"rd": 0, "rn": 0, "rm": 0, "imm": 0}
    for f, text in zip(fmt, ops):
        if f == "d":
            fields["rd"] = _reg(text, lineno, source)
        elif f == "n":
            fields["rn"] = _reg(text, lineno, source)
        elif f == "m":
            fields["rm"] = _reg(text, lineno, source)
        elif f == "i":
            try:
                fields["imm"] = _parse_int(text)
            except ValueError:
                raise AssemblyError(f"bad immediate {text!r}", lineno, source) from None
        elif f == "s":
            if text.startswith("#"):
                fields["imm"] = _parse_int(text)
            elif text in labels:
                delta = labels[text] - addr
                fields["imm"] = delta // 4
            else:
                raise AssemblyError(f"unresolved label {text!r}", lineno, source)
        elif f == "M":
            m = _MEM.match(text)
            if not m:
                raise AssemblyError(f"bad memory operand {text!r}", lineno, source)
            fields["rn"] = _reg(m.group(1), lineno, source)
            fields["imm"] = _parse_int(m.group(2)) if m.group(2) else 0
    try:
        return encode(DecodedInstruction(op, **fields))
    except ValueError as exc:
        raise AssemblyError(str(exc), lineno, source) from None


def assemble_file(path) -> ProgramImage:
    path = Path(path)
    return assemble(path.read_text(), name=str(path))
