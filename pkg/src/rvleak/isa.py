"""Architectural RV32IM simulator.

The ISA is modelled as a state machine: ``step`` maps an architectural
state to its successor and describes the transition as a ``RetiredEvent``.
``run`` iterates ``step`` and collects the retired events.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterable, Optional

MASK32 = 0xFFFFFFFF
HALT_WORD = 0x0000006F  # jal x0, 0

CODE_BASE = 0x00001000
CODE_SIZE = 0x00010000
DATA_BASE = 0x00020000
DATA_SIZE = 0x00001000


class IllegalInstruction(Exception):
    def __init__(self, word: int):
        super().__init__(f"illegal instruction 0x{word & MASK32:08x}")
        self.word = word


class FieldOutOfRange(ValueError):
    pass


class MemoryFault(Exception):
    def __init__(self, address: int, kind: str):
        super().__init__(f"{kind} fault at 0x{address & MASK32:08x}")
        self.address = address
        self.kind = kind


# mnemonic -> (format, opcode, funct3, funct7)
OPCODES: dict[str, tuple[str, int, Optional[int], Optional[int]]] = {
    "LUI": ("U", 0b0110111, None, None),
    "AUIPC": ("U", 0b0010111, None, None),
    "JAL": ("J", 0b1101111, None, None),
    "JALR": ("I", 0b1100111, 0, None),
    "BEQ": ("B", 0b1100011, 0, None),
    "BNE": ("B", 0b1100011, 1, None),
    "BLT": ("B", 0b1100011, 4, None),
    "BGE": ("B", 0b1100011, 5, None),
    "BLTU": ("B", 0b1100011, 6, None),
    "BGEU": ("B", 0b1100011, 7, None),
    "LB": ("I", 0b0000011, 0, None),
    "LH": ("I", 0b0000011, 1, None),
    "LW": ("I", 0b0000011, 2, None),
    "LBU": ("I", 0b0000011, 4, None),
    "LHU": ("I", 0b0000011, 5, None),
    "SB": ("S", 0b0100011, 0, None),
    "SH": ("S", 0b0100011, 1, None),
    "SW": ("S", 0b0100011, 2, None),
    "ADDI": ("I", 0b0010011, 0, None),
    "SLTI": ("I", 0b0010011, 2, None),
    "SLTIU": ("I", 0b0010011, 3, None),
    "XORI": ("I", 0b0010011, 4, None),
    "ORI": ("I", 0b0010011, 6, None),
    "ANDI": ("I", 0b0010011, 7, None),
    "SLLI": ("SH", 0b0010011, 1, 0x00),
    "SRLI": ("SH", 0b0010011, 5, 0x00),
    "SRAI": ("SH", 0b0010011, 5, 0x20),
    "ADD": ("R", 0b0110011, 0, 0x00),
    "SUB": ("R", 0b0110011, 0, 0x20),
    "SLL": ("R", 0b0110011, 1, 0x00),
    "SLT": ("R", 0b0110011, 2, 0x00),
    "SLTU": ("R", 0b0110011, 3, 0x00),
    "XOR": ("R", 0b0110011, 4, 0x00),
    "SRL": ("R", 0b0110011, 5, 0x00),
    "SRA": ("R", 0b0110011, 5, 0x20),
    "OR": ("R", 0b0110011, 6, 0x00),
    "AND": ("R", 0b0110011, 7, 0x00),
    "MUL": ("R", 0b0110011, 0, 0x01),
    "MULH": ("R", 0b0110011, 1, 0x01),
    "MULHSU": ("R", 0b0110011, 2, 0x01),
    "MULHU": ("R", 0b0110011, 3, 0x01),
    "DIV": ("R", 0b0110011, 4, 0x01),
    "DIVU": ("R", 0b0110011, 5, 0x01),
    "REM": ("R", 0b0110011, 6, 0x01),
    "REMU": ("R", 0b0110011, 7, 0x01),
}
MNEMONICS: tuple[str, ...] = tuple(OPCODES)

_DECODE_TABLE = {(op, f3, f7): m for m, (_, op, f3, f7) in OPCODES.items()}

# which register fields each format carries
FORMAT_FIELDS = {
    "R": ("rd", "rs1", "rs2"),
    "I": ("rd", "rs1", "imm"),
    "SH": ("rd", "rs1", "imm"),
    "S": ("rs1", "rs2", "imm"),
    "B": ("rs1", "rs2", "imm"),
    "U": ("rd", "imm"),
    "J": ("rd", "imm"),
}

LOADS = frozenset({"LB", "LH", "LW", "LBU", "LHU"})
STORES = frozenset({"SB", "SH", "SW"})
BRANCHES = frozenset({"BEQ", "BNE", "BLT", "BGE", "BLTU", "BGEU"})
JUMPS = frozenset({"JAL", "JALR"})
MULS = frozenset({"MUL", "MULH", "MULHSU", "MULHU"})
DIVS = frozenset({"DIV", "DIVU", "REM", "REMU"})
WIDTH = {"LB": 1, "LBU": 1, "SB": 1, "LH": 2, "LHU": 2, "SH": 2, "LW": 4, "SW": 4}


def fmt_of(mnemonic: str) -> str:
    return OPCODES[mnemonic][0]


def has_field(mnemonic: str, name: str) -> bool:
    return name in FORMAT_FIELDS[OPCODES[mnemonic][0]]


def sext(value: int, bits: int) -> int:
    value &= (1 << bits) - 1
    return value - (1 << bits) if value >> (bits - 1) else value


def signed(value: int) -> int:
    return value - (1 << 32) if value & 0x80000000 else value


@dataclass(frozen=True, slots=True)
class DecodedInst:
    mnemonic: str
    rd: Optional[int] = None
    rs1: Optional[int] = None
    rs2: Optional[int] = None
    imm: Optional[int] = None
    raw: int = 0

    def __str__(self) -> str:
        parts = [f"x{r}" for r in (self.rd, self.rs1, self.rs2) if r is not None]
        if self.imm is not None:
            parts.append(str(self.imm))
        return f"{self.mnemonic.lower()} {', '.join(parts)}"


@lru_cache(maxsize=1 << 16)
def decode(word: int) -> DecodedInst:
    """Decode one 32-bit word; non-canonical encodings are illegal."""
    word &= MASK32
    op = word & 0x7F
    rd = (word >> 7) & 0x1F
    f3 = (word >> 12) & 0x7
    rs1 = (word >> 15) & 0x1F
    rs2 = (word >> 20) & 0x1F
    f7 = word >> 25
    m = _DECODE_TABLE.get((op, None, None))
    if m is None:
        m = _DECODE_TABLE.get((op, f3, None))
    if m is None and op in (0b0110011, 0b0010011):
        m = _DECODE_TABLE.get((op, f3, f7))
    if m is None:
        raise IllegalInstruction(word)
    fmt = OPCODES[m][0]
    if fmt == "R":
        return DecodedInst(m, rd, rs1, rs2, None, word)
    if fmt == "I":
        return DecodedInst(m, rd, rs1, None, sext(word >> 20, 12), word)
    if fmt == "SH":
        return DecodedInst(m, rd, rs1, None, rs2, word)
    if fmt == "S":
        imm = sext(((word >> 25) << 5) | ((word >> 7) & 0x1F), 12)
        return DecodedInst(m, None, rs1, rs2, imm, word)
    if fmt == "B":
        imm = (
            (((word >> 31) & 1) << 12)
            | (((word >> 7) & 1) << 11)
            | (((word >> 25) & 0x3F) << 5)
            | (((word >> 8) & 0xF) << 1)
        )
        return DecodedInst(m, None, rs1, rs2, sext(imm, 13), word)
    if fmt == "U":
        return DecodedInst(m, rd, None, None, signed(word & 0xFFFFF000), word)
    imm = (
        (((word >> 31) & 1) << 20)
        | (((word >> 12) & 0xFF) << 12)
        | (((word >> 20) & 1) << 11)
        | (((word >> 21) & 0x3FF) << 1)
    )
    return DecodedInst(m, rd, None, None, sext(imm, 21), word)


def _reg(value: Optional[int], name: str) -> int:
    if value is None or not 0 <= value < 32:
        raise FieldOutOfRange(f"{name}={value!r} is not a register index")
    return value


def _imm_range(imm: Optional[int], lo: int, hi: int, align: int = 1) -> int:
    if imm is None or not lo <= imm <= hi or imm % align:
        raise FieldOutOfRange(f"immediate {imm!r} outside [{lo}, {hi}] (multiple of {align})")
    return imm


def encode(inst: DecodedInst) -> int:
    """Encode the fields of ``inst``; ``inst.raw`` is ignored."""
    try:
        fmt, op, f3, f7 = OPCODES[inst.mnemonic]
    except KeyError:
        raise FieldOutOfRange(f"unknown mnemonic {inst.mnemonic!r}") from None
    for name in ("rd", "rs1", "rs2", "imm"):
        if name not in FORMAT_FIELDS[fmt] and getattr(inst, name) is not None:
            raise FieldOutOfRange(f"{inst.mnemonic} has no {name} field")
    if fmt == "R":
        return (f7 << 25) | (_reg(inst.rs2, "rs2") << 20) | (_reg(inst.rs1, "rs1") << 15) | (
            f3 << 12) | (_reg(inst.rd, "rd") << 7) | op
    if fmt == "I":
        imm = _imm_range(inst.imm, -2048, 2047) & 0xFFF
        return (imm << 20) | (_reg(inst.rs1, "rs1") << 15) | (f3 << 12) | (_reg(inst.rd, "rd") << 7) | op
    if fmt == "SH":
        shamt = _imm_range(inst.imm, 0, 31)
        return (f7 << 25) | (shamt << 20) | (_reg(inst.rs1, "rs1") << 15) | (f3 << 12) | (
            _reg(inst.rd, "rd") << 7) | op
    if fmt == "S":
        imm = _imm_range(inst.imm, -2048, 2047) & 0xFFF
        return ((imm >> 5) << 25) | (_reg(inst.rs2, "rs2") << 20) | (_reg(inst.rs1, "rs1") << 15) | (
            f3 << 12) | ((imm & 0x1F) << 7) | op
    if fmt == "B":
        imm = _imm_range(inst.imm, -4096, 4094, 2) & 0x1FFF
        return (((imm >> 12) & 1) << 31) | (((imm >> 5) & 0x3F) << 25) | (_reg(inst.rs2, "rs2") << 20) | (
            _reg(inst.rs1, "rs1") << 15) | (f3 << 12) | (((imm >> 1) & 0xF) << 8) | (((imm >> 11) & 1) << 7) | op
    if fmt == "U":
        imm = _imm_range(inst.imm, -(1 << 31), (1 << 31) - 4096, 4096) & MASK32
        return imm | (_reg(inst.rd, "rd") << 7) | op
    imm = _imm_range(inst.imm, -(1 << 20), (1 << 20) - 2, 2) & 0x1FFFFF
    return (((imm >> 20) & 1) << 31) | (((imm >> 1) & 0x3FF) << 21) | (((imm >> 11) & 1) << 20) | (
        ((imm >> 12) & 0xFF) << 12) | (_reg(inst.rd, "rd") << 7) | op


def make(mnemonic: str, rd: Optional[int] = None, rs1: Optional[int] = None,
         rs2: Optional[int] = None, imm: Optional[int] = None) -> DecodedInst:
    """Build a fully populated instruction (``raw`` included) from its fields."""
    return decode(encode(DecodedInst(mnemonic, rd, rs1, rs2, imm)))


NOP = make("ADDI", 0, 0, None, 0)


# ---------------------------------------------------------------------------
# pure operation semantics, shared with the pipeline model's execute unit


def alu(mnemonic: str, a: int, b: int) -> int:
    """Result of an R-type or OP-IMM operation on unsigned 32-bit operands."""
    if mnemonic in ("ADD", "ADDI"):
        return (a + b) & MASK32
    if mnemonic == "SUB":
        return (a - b) & MASK32
    if mnemonic in ("SLL", "SLLI"):
        return (a << (b & 31)) & MASK32
    if mnemonic in ("SLT", "SLTI"):
        return int(signed(a) < signed(b))
    if mnemonic in ("SLTU", "SLTIU"):
        return int(a < b)
    if mnemonic in ("XOR", "XORI"):
        return a ^ b
    if mnemonic in ("SRL", "SRLI"):
        return a >> (b & 31)
    if mnemonic in ("SRA", "SRAI"):
        return (signed(a) >> (b & 31)) & MASK32
    if mnemonic in ("OR", "ORI"):
        return a | b
    if mnemonic in ("AND", "ANDI"):
        return a & b
    if mnemonic == "MUL":
        return (a * b) & MASK32
    if mnemonic == "MULH":
        return ((signed(a) * signed(b)) >> 32) & MASK32
    if mnemonic == "MULHSU":
        return ((signed(a) * b) >> 32) & MASK32
    if mnemonic == "MULHU":
        return (a * b) >> 32
    if mnemonic == "DIV":
        sa, sb = signed(a), signed(b)
        if sb == 0:
            return MASK32
        if sa == -(1 << 31) and sb == -1:
            return a
        q = abs(sa) // abs(sb)
        return (-q if (sa < 0) != (sb < 0) else q) & MASK32
    if mnemonic == "DIVU":
        return MASK32 if b == 0 else a // b
    if mnemonic == "REM":
        sa, sb = signed(a), signed(b)
        if sb == 0:
            return a
        if sa == -(1 << 31) and sb == -1:
            return 0
        r = abs(sa) % abs(sb)
        return (-r if sa < 0 else r) & MASK32
    if mnemonic == "REMU":
        return a if b == 0 else a % b
    raise ValueError(f"{mnemonic} is not an ALU operation")


def branch_taken(mnemonic: str, a: int, b: int) -> bool:
    if mnemonic == "BEQ":
        return a == b
    if mnemonic == "BNE":
        return a != b
    if mnemonic == "BLT":
        return signed(a) < signed(b)
    if mnemonic == "BGE":
        return signed(a) >= signed(b)
    if mnemonic == "BLTU":
        return a < b
    if mnemonic == "BGEU":
        return a >= b
    raise ValueError(f"{mnemonic} is not a branch")


def load_extend(mnemonic: str, raw: int) -> int:
    if mnemonic == "LB":
        return sext(raw, 8) & MASK32
    if mnemonic == "LH":
        return sext(raw, 16) & MASK32
    return raw


def reads_rs1(inst: DecodedInst) -> bool:
    return inst.rs1 is not None


def reads_rs2(inst: DecodedInst) -> bool:
    return inst.rs2 is not None


# ---------------------------------------------------------------------------
# state and events


@dataclass(frozen=True)
class MemoryMap:
    code_base: int = CODE_BASE
    code_size: int = CODE_SIZE
    data_base: int = DATA_BASE
    data_size: int = DATA_SIZE

    def in_code(self, address: int, width: int = 4) -> bool:
        return self.code_base <= address and address + width <= self.code_base + self.code_size

    def in_data(self, address: int, width: int) -> bool:
        return self.data_base <= address and address + width <= self.data_base + self.data_size


DEFAULT_MAP = MemoryMap()


@dataclass
class ArchState:
    pc: int = CODE_BASE
    regs: list[int] = field(default_factory=lambda: [0] * 32)
    mem: dict[int, int] = field(default_factory=dict)
    retired_count: int = 0
    memory_map: MemoryMap = DEFAULT_MAP

    def copy(self) -> "ArchState":
        return replace(self, regs=list(self.regs), mem=dict(self.mem))

    def read(self, address: int, width: int) -> int:
        mem = self.mem
        value = 0
        for i in range(width):
            value |= mem.get((address + i) & MASK32, 0) << (8 * i)
        return value

    def write(self, address: int, width: int, value: int) -> None:
        for i in range(width):
            self.mem[(address + i) & MASK32] = (value >> (8 * i)) & 0xFF


@dataclass(frozen=True, slots=True)
class RetiredEvent:
    order: int
    inst: DecodedInst
    pc_before: int
    pc_after: int
    rs1_value: Optional[int] = None
    rs2_value: Optional[int] = None
    rd_value: Optional[int] = None
    mem_read: Optional[tuple[int, int, int]] = None  # (address, width, data)
    mem_write: Optional[tuple[int, int, int]] = None
    branch_taken: Optional[bool] = None


HALT_SENTINEL = "halt"
HALT_FUEL = "fuel"
HALT_FAULT = "fault"


@dataclass(frozen=True)
class ArchTrace:
    events: tuple[RetiredEvent, ...]
    halted: str
    fault: Optional[str] = None

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class Program:
    """A code image placed contiguously at ``base``."""

    code: tuple[int, ...]
    base: int = CODE_BASE

    @classmethod
    def from_insts(cls, insts: Iterable[DecodedInst], base: int = CODE_BASE) -> "Program":
        return cls(tuple(encode(i) for i in insts), base)

    def image(self) -> list[tuple[int, int]]:
        return [(self.base + 4 * i, w) for i, w in enumerate(self.code)]


def load_program(program: Program, init_regs: Optional[Iterable[int]] = None,
                 memory_map: MemoryMap = DEFAULT_MAP) -> ArchState:
    state = ArchState(pc=program.base, memory_map=memory_map)
    if init_regs is not None:
        regs = [v & MASK32 for v in init_regs]
        if len(regs) != 32:
            raise ValueError("initial register file needs 32 values")
        regs[0] = 0
        state.regs = regs
    for address, word in program.image():
        state.write(address, 4, word)
    return state


def _execute(state: ArchState, inst: DecodedInst) -> RetiredEvent:
    """Apply ``inst`` to ``state`` in place and describe the transition."""
    m = inst.mnemonic
    pc = state.pc
    regs = state.regs
    a = regs[inst.rs1] if inst.rs1 is not None else None
    b = regs[inst.rs2] if inst.rs2 is not None else None
    next_pc = (pc + 4) & MASK32
    rd_value = None
    mem_read = mem_write = None
    taken = None
    fmt = OPCODES[m][0]
    if fmt == "R":
        rd_value = alu(m, a, b)
    elif fmt in ("I", "SH") and m not in LOADS and m != "JALR":
        rd_value = alu(m, a, inst.imm & MASK32)
    elif m in LOADS:
        width = WIDTH[m]
        address = (a + inst.imm) & MASK32
        if not state.memory_map.in_data(address, width):
            raise MemoryFault(address, "load")
        data = state.read(address, width)
        mem_read = (address, width, data)
        rd_value = load_extend(m, data)
    elif m in STORES:
        width = WIDTH[m]
        address = (a + inst.imm) & MASK32
        if not state.memory_map.in_data(address, width):
            raise MemoryFault(address, "store")
        data = b & ((1 << (8 * width)) - 1)
        state.write(address, width, data)
        mem_write = (address, width, data)
    elif m in BRANCHES:
        taken = branch_taken(m, a, b)
        if taken:
            next_pc = (pc + inst.imm) & MASK32
    elif m == "JAL":
        rd_value = next_pc
        next_pc = (pc + inst.imm) & MASK32
    elif m == "JALR":
        rd_value = next_pc
        next_pc = (a + inst.imm) & ~1 & MASK32
    elif m == "LUI":
        rd_value = inst.imm & MASK32
    elif m == "AUIPC":
        rd_value = (pc + inst.imm) & MASK32
    if rd_value is not None and inst.rd == 0:
        rd_value = 0
    if rd_value is not None and inst.rd:
        regs[inst.rd] = rd_value
    event = RetiredEvent(state.retired_count, inst, pc, next_pc, a, b, rd_value, mem_read, mem_write, taken)
    state.pc = next_pc
    state.retired_count += 1
    return event


def fetch(state: ArchState) -> DecodedInst:
    if state.pc & 3 or not state.memory_map.in_code(state.pc):
        raise MemoryFault(state.pc, "fetch")
    return decode(state.read(state.pc, 4))


def step(state: ArchState) -> tuple[ArchState, RetiredEvent]:
    """Execute one instruction; the input state is left untouched."""
    nxt = state.copy()
    event = _execute(nxt, fetch(nxt))
    return nxt, event


def run(init: ArchState, fuel: int) -> ArchTrace:
    """Run until the halt sentinel, a fault, or ``fuel`` retirements."""
    if fuel <= 0:
        raise ValueError("fuel must be positive")
    state = init.copy()
    events = []
    while True:
        if len(events) >= fuel:
            return ArchTrace(tuple(events), HALT_FUEL)
        try:
            if state.memory_map.in_code(state.pc) and not state.pc & 3 and state.read(state.pc, 4) == HALT_WORD:
                return ArchTrace(tuple(events), HALT_SENTINEL)
            events.append(_execute(state, fetch(state)))
        except (IllegalInstruction, MemoryFault) as exc:
            return ArchTrace(tuple(events), HALT_FAULT, str(exc))


def run_program(program: Program, init_regs: Optional[Iterable[int]] = None, fuel: int = 10_000) -> ArchTrace:
    return run(load_program(program, init_regs), fuel)
