"""Seeded generation of test-case program pairs.

Every program has three parts: a prologue that sets all writable registers to
random values, a middle section that instantiates the target atom's
instruction type and makes the two programs differ in the targeted leakage
source, and a random suffix of safe instructions. Only the middle differs.
"""
from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from typing import Optional

from .isa import (BRANCHES, CODE_BASE, DATA_BASE, LOADS, MASK32, NOP, STORES, WIDTH, DecodedInst, Program,
                  alu, branch_taken, has_field, make)
from .template import FAMILIES, ContractAtom, Template, distance_of, family_of

R_ALU = ("ADD", "SUB", "SLL", "SLT", "SLTU", "XOR", "SRL", "SRA", "OR", "AND")
R_MULDIV = ("MUL", "MULH", "MULHSU", "MULHU", "DIV", "DIVU", "REM", "REMU")
I_ALU = ("ADDI", "SLTI", "SLTIU", "XORI", "ORI", "ANDI")
SHIFTS = ("SLLI", "SRLI", "SRAI")
LOAD_M = ("LB", "LH", "LW", "LBU", "LHU")
STORE_M = ("SB", "SH", "SW")
BRANCH_M = ("BEQ", "BNE", "BLT", "BGE", "BLTU", "BGEU")
STORE_OF_WIDTH = {1: "SB", 2: "SH", 4: "SW"}

# alternatives used when the opcode itself is the diverging field
SAME_SHAPE = {}
for _group in (R_ALU + R_MULDIV, I_ALU, SHIFTS, LOAD_M, STORE_M, BRANCH_M, ("LUI", "AUIPC"), ("JAL", "JALR")):
    for _m in _group:
        SAME_SHAPE[_m] = tuple(x for x in _group if x != _m)


class UngeneratableAtom(ValueError):
    pass


@dataclass(frozen=True)
class GenConfig:
    prologue_policy: str = "mixed-magnitude"  # or "uniform"
    families: tuple[str, ...] = FAMILIES  # leakage-source families that get a divergence strategy
    suffix_length: int = 8
    fuel: int = 400
    data_base: int = DATA_BASE
    data_size: int = 0x800  # sandbox for every generated access; power of two, <= 0x800
    pad_equal_length: bool = True
    data_only: bool = False  # reject pairs whose instruction words differ

    def __post_init__(self):
        object.__setattr__(self, "families", tuple(self.families))
        if self.suffix_length < 0:
            raise ValueError("suffix_length must be >= 0")
        if self.data_size <= 0 or self.data_size & (self.data_size - 1) or self.data_size > 0x800:
            raise ValueError("data_size must be a power of two no larger than 0x800")
        if self.data_base & 0xFFF:
            raise ValueError("data_base must be 4 KiB aligned")
        if self.prologue_policy not in ("mixed-magnitude", "uniform"):
            raise ValueError(f"unknown prologue policy {self.prologue_policy!r}")
        if not set(self.families) <= set(FAMILIES):
            raise ValueError(f"unknown families {self.families}")

    def to_dict(self) -> dict:
        return {
            "prologue_policy": self.prologue_policy,
            "families": list(self.families),
            "suffix_length": self.suffix_length,
            "fuel": self.fuel,
            "data_base": self.data_base,
            "data_size": self.data_size,
            "pad_equal_length": self.pad_equal_length,
            "data_only": self.data_only,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        return cls(**{**d, "families": tuple(d.get("families", FAMILIES))})


@dataclass(frozen=True)
class TestCase:
    __test__ = False  # not a pytest class

    id: str
    target_atom: str
    program_a: Program
    program_b: Program
    init_regs: tuple[int, ...]
    seed: int


@dataclass
class Suite:
    seed: int
    config: GenConfig
    testcases: list[TestCase]
    ungeneratable: dict[str, int] = field(default_factory=dict)


def sandbox_address(raw: int, base: int, size: int) -> int:
    """Fold ``raw`` into [base, base+size); the low two bits survive because size is a power of two >= 4."""
    if size <= 0 or size & (size - 1):
        raise ValueError("region size must be a power of two")
    return base + (raw % size)


def split_hi_lo(value: int) -> tuple[int, int]:
    """LUI/ADDI immediates that materialize a 32-bit value."""
    value &= MASK32
    lo = value & 0xFFF
    if lo >= 0x800:
        lo -= 0x1000
    hi = ((value - lo) & MASK32) & 0xFFFFF000
    if hi >= 0x80000000:
        hi -= 1 << 32
    return hi, lo


def load_imm(rd: int, value: int) -> list[DecodedInst]:
    hi, lo = split_hi_lo(value)
    return [make("LUI", rd, imm=hi), make("ADDI", rd, rd, imm=lo)]


def sub_seed(seed: int, index: int) -> int:
    digest = hashlib.sha256(f"{seed}/{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


class _Pair:
    """Two instruction lists built in lockstep."""

    def __init__(self, base: int):
        self.base = base
        self.a: list[DecodedInst] = []
        self.b: list[DecodedInst] = []

    def both(self, *insts: DecodedInst) -> None:
        self.a.extend(insts)
        self.b.extend(insts)

    def split(self, ia: list[DecodedInst], ib: list[DecodedInst]) -> None:
        self.a.extend(ia)
        self.b.extend(ib)

    def set_reg(self, r: int, va: int, vb: Optional[int] = None) -> None:
        self.split(load_imm(r, va), load_imm(r, va if vb is None else vb))

    def pad(self) -> None:
        while len(self.a) < len(self.b):
            self.a.append(NOP)
        while len(self.b) < len(self.a):
            self.b.append(NOP)

    def next_address(self, extra: int = 0) -> int:
        assert len(self.a) == len(self.b)
        return self.base + 4 * (len(self.a) + extra)


class _Gen:
    def __init__(self, rng: random.Random, cfg: GenConfig):
        self.rng = rng
        self.cfg = cfg

    # value helpers
    def value(self) -> int:
        rng = self.rng
        if self.cfg.prologue_policy == "uniform":
            return rng.getrandbits(32)
        v = rng.getrandbits(rng.randint(0, 32))
        if rng.random() < 0.25:
            v = -v
        return v & MASK32

    def regs(self, k: int, exclude=()) -> list[int]:
        pool = [r for r in range(1, 32) if r not in exclude]
        return self.rng.sample(pool, k)

    def mem_target(self) -> int:
        return sandbox_address(self.rng.getrandbits(32), self.cfg.data_base, self.cfg.data_size)

    def mem_imm(self) -> int:
        half = self.cfg.data_size // 2
        return self.rng.randint(-half, half - 8)

    def mem_base_for(self, address: int, imm: int) -> int:
        return (address - imm) & MASK32

    def imm_for(self, m: str) -> int:
        rng = self.rng
        if m in SHIFTS:
            return rng.randrange(32)
        if m in ("LUI", "AUIPC"):
            return split_hi_lo(rng.getrandbits(32))[0]
        return rng.randint(-2048, 2047)

    def other_imm(self, m: str, imm: int) -> int:
        while True:
            v = self.imm_for(m)
            if v != imm:
                return v

    def branch_operands(self, m: str, want_a: bool, want_b: bool) -> tuple[int, int, int]:
        """(x, ya, yb): rs1 holds x in both programs, rs2 holds ya / yb."""
        rng = self.rng
        while True:
            x = self.value()
            cands = [x, (x + 1) & MASK32, (x - 1) & MASK32, self.value(), self.value(), x ^ 0x80000000]
            ya = [y for y in cands if branch_taken(m, x, y) == want_a]
            yb = [y for y in cands if branch_taken(m, x, y) == want_b]
            if ya and yb:
                return x, rng.choice(ya), rng.choice(yb)

    # program parts
    def prologue(self, pair: _Pair) -> None:
        for r in range(1, 32):
            pair.both(*load_imm(r, self.value()))

    def suffix(self, pair: _Pair) -> None:
        rng = self.rng
        emitted = 0
        n = self.cfg.suffix_length
        while emitted < n:
            room = n - emitted
            kind = rng.choice(("r", "r", "muldiv", "i", "i", "lui", "mem", "branch", "jal"))
            if kind == "mem" and room < 4:
                kind = "i"
            if kind == "r":
                rd, r1, r2 = (rng.randrange(1, 32) for _ in range(3))
                pair.both(make(rng.choice(R_ALU), rd, r1, r2))
            elif kind == "muldiv":
                rd, r1, r2 = (rng.randrange(1, 32) for _ in range(3))
                pair.both(make(rng.choice(R_MULDIV), rd, r1, r2))
            elif kind == "i":
                m = rng.choice(I_ALU + SHIFTS)
                pair.both(make(m, rng.randrange(1, 32), rng.randrange(1, 32), imm=self.imm_for(m)))
            elif kind == "lui":
                pair.both(make("LUI", rng.randrange(1, 32), imm=self.imm_for("LUI")))
            elif kind == "mem":
                t, bse = self.regs(2)
                src = rng.randrange(1, 32)
                m = rng.choice(LOAD_M + STORE_M)
                # naturally aligned, so the suffix itself never toggles alignment
                seq = [make("ANDI", t, src, imm=self.cfg.data_size - WIDTH[m]),
                       make("LUI", bse, imm=self.cfg.data_base),
                       make("ADD", t, t, bse)]
                if m in LOADS:
                    seq.append(make(m, rng.randrange(1, 32), t, imm=0))
                else:
                    seq.append(make(m, None, t, rng.randrange(1, 32), imm=0))
                pair.both(*seq)
                emitted += 3
            elif kind == "branch":
                pair.both(make(rng.choice(BRANCH_M), None, rng.randrange(1, 32), rng.randrange(1, 32), imm=4))
            else:
                pair.both(make("JAL", rng.randrange(0, 32), imm=4))
            emitted += 1

    def middle(self, pair: _Pair, atom: ContractAtom) -> None:
        m, src = atom.inst_type, atom.source
        fam = family_of(src)
        if fam not in self.cfg.families:
            raise UngeneratableAtom(f"{atom.id}: family {fam} disabled")
        handler = getattr(self, f"_mid_{fam.lower()}")
        handler(pair, m, src)
        if self.cfg.pad_equal_length:
            pair.pad()

    # an instance of m; memory ops and JALR get their rs1 prepared here
    def _instance(self, pair: _Pair, m: str, rd=None, rs1=None, rs2=None, imm=None, taken=None,
                  skip: int = 0, address: Optional[int] = None, emit: bool = True) -> DecodedInst:
        rng = self.rng
        rd, rs1, rs2 = ((r if r is not None else rng.randrange(1, 32)) if has_field(m, name) else None
                        for r, name in ((rd, "rd"), (rs1, "rs1"), (rs2, "rs2")))
        if m in BRANCHES or m == "JAL":
            imm = 4 * (1 + skip) if imm is None else imm
        elif m == "JALR":
            imm = 4 * (1 + skip) if imm is None else imm
        elif m in LOADS or m in STORES:
            imm = self.mem_imm() if imm is None else imm
        elif imm is None and has_field(m, "imm"):
            imm = self.imm_for(m)
        inst = make(m, rd, rs1, rs2, imm)
        return inst

    def _setup_mem(self, pair: _Pair, base_reg: int, imm: int, addr_a: int, addr_b: Optional[int] = None) -> None:
        addr_b = addr_a if addr_b is None else addr_b
        pair.set_reg(base_reg, self.mem_base_for(addr_a, imm), self.mem_base_for(addr_b, imm))

    def _emit_target(self, pair: _Pair, ia: DecodedInst, ib: Optional[DecodedInst] = None,
                     skip: int = 0) -> None:
        pair.split([ia], [ib or ia])
        pair.both(*([NOP] * skip))

    def _jalr_setup(self, pair: _Pair, reg: int, extra_before: int = 0, low_bit_b: int = 0,
                    skip_b: Optional[int] = None, skip: int = 0) -> None:
        """Point ``reg`` at the JALR emitted right after this setup (and ``extra_before`` insts)."""
        here = pair.next_address(2 + extra_before)
        pair.set_reg(reg, here, (here + 4 * ((skip_b if skip_b is not None else skip) - skip)) | low_bit_b)

    # --- IL -----------------------------------------------------------------
    def _mid_il(self, pair: _Pair, m: str, src: str) -> None:
        rng = self.rng
        if src == "OP":
            alt = rng.choice(SAME_SHAPE[m])
            if {m, alt} == {"JAL", "JALR"}:
                rd, r1 = self.regs(2)
                self._jalr_setup(pair, r1)
                ja, jb = make("JAL", rd, imm=4), make("JALR", rd, r1, imm=4)
                if m == "JALR":
                    ja, jb = jb, ja
                self._emit_target(pair, ja, jb)
                return
            rd, r1, r2 = self.regs(3)
            if m in LOADS or m in STORES:
                imm = self.mem_imm()
                self._setup_mem(pair, r1, imm, self.mem_target() & ~3)
            else:
                imm = None
            ia = self._instance(pair, m, rd if has_field(m, "rd") else None, r1, r2, imm=imm)
            # same-shape alternatives share the immediate range, so fields carry over
            self._emit_target(pair, ia, make(alt, ia.rd, ia.rs1, ia.rs2, ia.imm))
            return
        if src in ("RD", "RS1", "RS2"):
            field_name = src.lower()
            rd, r1, r2, alt = self.regs(4)
            if m == "JALR":
                if src == "RS1":
                    here = pair.next_address(4)
                    pair.set_reg(r1, here)
                    pair.set_reg(alt, here)
                else:
                    self._jalr_setup(pair, r1)
                ia = make("JALR", rd, r1, imm=4)
                ib = make("JALR", alt if src == "RD" else rd, alt if src == "RS1" else r1, imm=4)
                self._emit_target(pair, ia, ib)
                return
            if m in LOADS or m in STORES:
                imm = self.mem_imm()
                addr = self.mem_target()
                self._setup_mem(pair, r1, imm, addr)
                if src == "RS1":
                    self._setup_mem(pair, alt, imm, addr)
                if src == "RS2":
                    v = self.value()
                    pair.set_reg(r2, v)
                    pair.set_reg(alt, v)
            else:
                imm = None
                if src in ("RS1", "RS2"):
                    v = self.value()
                    pair.set_reg(r1 if src == "RS1" else r2, v)
                    pair.set_reg(alt, v)
            ia = self._instance(pair, m, rd if has_field(m, "rd") else None, r1 if has_field(m, "rs1") else None,
                                r2 if has_field(m, "rs2") else None, imm=imm)
            ib = make(m, **{"rd": ia.rd, "rs1": ia.rs1, "rs2": ia.rs2, "imm": ia.imm, field_name: alt})
            self._emit_target(pair, ia, ib)
            return
        # IMM
        if m in BRANCHES:
            r1, r2 = self.regs(2)
            x, y, _ = self.branch_operands(m, False, False)
            pair.set_reg(r1, x)
            pair.set_reg(r2, y)
            skip_a, skip_b = rng.sample(range(0, 4), 2)
            ia = make(m, None, r1, r2, 4 * (1 + skip_a))
            ib = make(m, None, r1, r2, 4 * (1 + skip_b))
            self._emit_target(pair, ia, ib, skip=max(skip_a, skip_b))
            return
        if m == "JAL":
            skip_a, skip_b = rng.sample(range(0, 4), 2)
            rd = rng.randrange(1, 32)
            self._emit_target(pair, make("JAL", rd, imm=4 * (1 + skip_a)), make("JAL", rd, imm=4 * (1 + skip_b)),
                              skip=max(skip_a, skip_b))
            return
        if m == "JALR":
            rd, r1 = self.regs(2)
            # different immediates, base adjusted so both land on the next instruction
            here = pair.next_address(2)
            da, db = rng.sample(range(-64, 64), 2)
            pair.set_reg(r1, here + 4 - 4 * da, here + 4 - 4 * db)
            self._emit_target(pair, make("JALR", rd, r1, imm=4 * da), make("JALR", rd, r1, imm=4 * db))
            return
        rd, r1, r2 = self.regs(3)
        if m in LOADS or m in STORES:
            base = (self.cfg.data_base + self.cfg.data_size // 2) & MASK32
            pair.set_reg(r1, base)
            ia_imm, ib_imm = self.mem_imm(), self.mem_imm()
            while ib_imm == ia_imm:
                ib_imm = self.mem_imm()
            ia = self._instance(pair, m, rd if has_field(m, "rd") else None, r1, r2 if has_field(m, "rs2") else None,
                                imm=ia_imm)
            ib = make(m, ia.rd, ia.rs1, ia.rs2, ib_imm)
        else:
            ia = self._instance(pair, m, rd if has_field(m, "rd") else None, r1 if has_field(m, "rs1") else None)
            ib = make(m, ia.rd, ia.rs1, ia.rs2, self.other_imm(m, ia.imm))
        self._emit_target(pair, ia, ib)

    # --- RL -----------------------------------------------------------------
    def _mid_rl(self, pair: _Pair, m: str, src: str) -> None:
        rng = self.rng
        rd, r1, r2, aux = self.regs(4)
        if m in LOADS or m in STORES:
            imm = self.mem_imm()
            if src == "REG_RS1":
                self._setup_mem(pair, r1, imm, self.mem_target(), self.mem_target())
            else:
                self._setup_mem(pair, r1, imm, self.mem_target())
            if src == "REG_RS2":
                pair.set_reg(r2, self.value(), self.value())
            if src == "REG_RD":
                # loaded value differs: store different data to the load address first
                width = WIDTH[m]
                va = self.value()
                pair.set_reg(aux, va, va ^ rng.randrange(1, 1 << (8 * width)))
                pair.both(make(STORE_OF_WIDTH[width], None, r1, aux, imm))
            ia = self._instance(pair, m, rd if has_field(m, "rd") else None, r1, r2 if has_field(m, "rs2") else None,
                                imm=imm)
            self._emit_target(pair, ia)
            return
        if m in BRANCHES:
            pair.set_reg(r1, self.value(), self.value() if src == "REG_RS1" else None)
            pair.set_reg(r2, self.value(), self.value() if src == "REG_RS2" else None)
            self._emit_target(pair, make(m, None, r1, r2, 4))
            return
        if m == "JALR":
            if src == "REG_RS1":
                self._jalr_setup(pair, r1, low_bit_b=1)
                self._emit_target(pair, make("JALR", rd, r1, imm=4))
            else:
                # rd = pc + 4 differs when the JALR sits one slot later; both paths retire two instructions
                here = pair.next_address(2)
                pair.split(load_imm(r1, here + 4) + [NOP, make("JALR", rd, r1, imm=4)],
                           load_imm(r1, here) + [make("JALR", rd, r1, imm=4), NOP])
            return
        if m == "JAL":
            pair.split([NOP, make("JAL", rd, imm=4)], [make("JAL", rd, imm=4), NOP])
            return
        if m in ("LUI", "AUIPC"):
            ia = make(m, rd, imm=self.imm_for(m))
            self._emit_target(pair, ia, make(m, rd, imm=self.other_imm(m, ia.imm)))
            return
        # register-register and register-immediate arithmetic
        target_src = src
        if src == "REG_RD":
            target_src = rng.choice(("REG_RS1", "REG_RS2")) if has_field(m, "rs2") else "REG_RS1"
        ia = self._instance(pair, m, rd, r1, r2)
        for _ in range(64):
            a1, a2 = self.value(), self.value()
            b1 = self.value() if target_src == "REG_RS1" else a1
            b2 = self.value() if target_src == "REG_RS2" else a2
            if src != "REG_RD":
                break
            if not has_field(m, "rs2"):
                a2 = b2 = ia.imm & MASK32
            if alu(m, a1, a2) != alu(m, b1, b2):
                break
        pair.set_reg(r1, a1, b1)
        if has_field(m, "rs2"):
            pair.set_reg(r2, a2, b2)
        self._emit_target(pair, ia)

    # --- ML -----------------------------------------------------------------
    def _mid_ml(self, pair: _Pair, m: str, src: str) -> None:
        rd, r1, r2, aux = self.regs(4)
        imm = self.mem_imm()
        if src in ("MEM_R_ADDR", "MEM_W_ADDR"):
            self._setup_mem(pair, r1, imm, self.mem_target(), self.mem_target())
        else:
            self._setup_mem(pair, r1, imm, self.mem_target())
        if src == "MEM_W_DATA":
            pair.set_reg(r2, self.value(), self.value())
        if src == "MEM_R_DATA":
            pair.set_reg(aux, self.value(), self.value())
            pair.both(make(STORE_OF_WIDTH[WIDTH[m]], None, r1, aux, imm))
        ia = self._instance(pair, m, rd if m in LOADS else None, r1, r2 if m in STORES else None, imm=imm)
        self._emit_target(pair, ia)

    # --- AL -----------------------------------------------------------------
    def _mid_al(self, pair: _Pair, m: str, src: str) -> None:
        rng = self.rng
        rd, r1, r2 = self.regs(3)
        imm = self.mem_imm()
        hi = self.mem_target() & ~3
        if src == "IS_WORD_ALIGNED":
            low_a, low_b = 0, rng.choice((1, 2, 3))
        else:
            low_a, low_b = 3, rng.choice((0, 1, 2))
        if rng.random() < 0.5:
            low_a, low_b = low_b, low_a
        self._setup_mem(pair, r1, imm, hi | low_a, hi | low_b)
        ia = self._instance(pair, m, rd if m in LOADS else None, r1, r2 if m in STORES else None, imm=imm)
        self._emit_target(pair, ia)

    # --- BL -----------------------------------------------------------------
    def _mid_bl(self, pair: _Pair, m: str, src: str) -> None:
        rng = self.rng
        rd, r1, r2 = self.regs(3)
        if m in BRANCHES:
            want = rng.random() < 0.5
            if src == "BRANCH_TAKEN":
                x, ya, yb = self.branch_operands(m, want, not want)
                pair.set_reg(r1, x)
                pair.set_reg(r2, ya, yb)
                self._emit_target(pair, make(m, None, r1, r2, 4))
            else:
                x, ya, yb = self.branch_operands(m, want, not want)
                pair.set_reg(r1, x)
                pair.set_reg(r2, ya, yb)
                self._emit_target(pair, make(m, None, r1, r2, 8), skip=1)
            return
        skip_a, skip_b = rng.sample(range(0, 4), 2)
        if m == "JAL":
            self._emit_target(pair, make("JAL", rd, imm=4 * (1 + skip_a)), make("JAL", rd, imm=4 * (1 + skip_b)),
                              skip=max(skip_a, skip_b))
            return
        here = pair.next_address(2)
        pair.set_reg(r1, here + 4 * skip_a, here + 4 * skip_b)
        self._emit_target(pair, make("JALR", rd, r1, imm=4), skip=max(skip_a, skip_b))

    # --- DL -----------------------------------------------------------------
    def _producer(self, target_reg: int, scratch: int, reads: bool, helper: int):
        """Value-preserving producer: (setup, a-version on target_reg, b-version on scratch)."""
        rng = self.rng
        kind = rng.choice(("alu", "alu", "alu", "load", "mul"))
        if reads:
            # anti-dependency: a reads target_reg, b reads scratch; both write scratch
            return [], make("ADDI", scratch, target_reg, imm=0), make("ADDI", scratch, scratch, imm=0)
        if kind == "load":
            # both versions load the saved value from the same address; only the destination differs
            addr = self.mem_target() & ~3
            setup = load_imm(helper, addr) + [make("SW", None, helper, target_reg, 0)]
            return setup, make("LW", target_reg, helper, imm=0), make("LW", scratch, helper, imm=0)
        if kind == "mul":
            return (load_imm(helper, 1), make("MUL", target_reg, target_reg, helper),
                    make("MUL", scratch, scratch, helper))
        op = rng.choice(("ADDI", "ORI", "XORI", "ANDI", "ADD", "SUB", "OR", "XOR", "SLLI", "SRLI", "SRAI"))
        if op in ("ADD", "SUB", "OR", "XOR"):
            return [], make(op, target_reg, target_reg, 0), make(op, scratch, scratch, 0)
        imm = -1 if op == "ANDI" else 0
        return [], make(op, target_reg, target_reg, imm=imm), make(op, scratch, scratch, imm=imm)

    def _mid_dl(self, pair: _Pair, m: str, src: str) -> None:
        n = distance_of(src)
        kind = src.rsplit("_", 1)[0]
        rd, r1, r2, scratch, helper = self.regs(5)
        imm = None
        if m in LOADS or m in STORES:
            imm = self.mem_imm()
            self._setup_mem(pair, r1, imm, self.mem_target())
        target_reg = {"RAW_RS1": r1, "RAW_RS2": r2, "WAW": rd, "RAW_RD": rd}[kind]
        setup, pa, pb = self._producer(target_reg, scratch, kind == "RAW_RD", helper)
        if m == "JALR":
            # r1 points at the JALR, which follows the producer setup, the producer and n-1 fillers
            pair.set_reg(r1, pair.next_address(2 + len(setup) + n))
        pair.both(*setup)
        pair.split([pa], [pb])
        pair.both(*([NOP] * (n - 1)))
        if m in BRANCHES or m in ("JAL", "JALR"):
            inst = make(m, rd if has_field(m, "rd") else None, r1 if has_field(m, "rs1") else None,
                        r2 if has_field(m, "rs2") else None, 4)
        else:
            inst = self._instance(pair, m, rd, r1, r2, imm=imm)
        self._emit_target(pair, inst)


def same_structure(a, b) -> bool:
    """True if two instruction sequences differ at most in LUI/ADDI immediates (register initialization data)."""
    if len(a) != len(b):
        return False
    for x, y in zip(a, b):
        if (x.mnemonic, x.rd, x.rs1, x.rs2) != (y.mnemonic, y.rd, y.rs1, y.rs2):
            return False
        if x.imm != y.imm and x.mnemonic not in ("LUI", "ADDI"):
            return False
    return True


def gen_testcase(seed: int, target_atom: str, cfg: GenConfig = GenConfig(), template: Optional[Template] = None,
                 test_id: Optional[str] = None) -> TestCase:
    """Generate the program pair for one target atom, deterministically in ``seed``."""
    if template is not None and target_atom not in template:
        raise UngeneratableAtom(f"{target_atom} is not in the template")
    try:
        atom = ContractAtom.parse(target_atom)
        family_of(atom.source)
    except (ValueError, KeyError):
        raise UngeneratableAtom(f"malformed atom id {target_atom!r}") from None
    rng = random.Random(f"{seed}:{target_atom}")
    gen = _Gen(rng, cfg)
    pair = _Pair(CODE_BASE)
    gen.prologue(pair)
    gen.middle(pair, atom)
    gen.suffix(pair)
    pair.both(make("JAL", 0, imm=0))  # halt sentinel
    if cfg.data_only and not same_structure(pair.a, pair.b):
        raise UngeneratableAtom(f"{target_atom}: divergence changes instruction structure")
    return TestCase(test_id or f"{target_atom}@{seed}", target_atom, Program.from_insts(pair.a),
                    Program.from_insts(pair.b), (0,) * 32, seed)


def gen_suite(seed: int, template: Template, count: int, cfg: GenConfig = GenConfig()) -> Suite:
    """``count`` test cases, round-robin over the template atoms of the enabled families.

    An atom whose generation fails three times is dropped from the rotation and
    reported in ``Suite.ungeneratable`` with its failure count.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    active = [a.id for a in template.atoms if a.family in cfg.families]
    cases: list[TestCase] = []
    ungeneratable: dict[str, int] = {}
    pos = 0
    draw = 0
    while len(cases) < count:
        if not active:
            raise UngeneratableAtom("no template atom can be generated under this configuration")
        pos %= len(active)
        atom = active[pos]
        s = sub_seed(seed, draw)
        draw += 1
        try:
            cases.append(gen_testcase(s, atom, cfg, template, test_id=f"t{len(cases):06d}"))
            pos += 1
        except UngeneratableAtom:
            ungeneratable[atom] = ungeneratable.get(atom, 0) + 1
            if ungeneratable[atom] >= 3:
                active.pop(pos)
            else:
                pos += 1
    return Suite(seed, cfg, cases, ungeneratable)
