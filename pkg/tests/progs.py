"""Seeded random RV32IM programs for conformance tests.

Unlike testgen pairs, these are single programs drawn from the whole
instruction set: forward branches and jumps over real instructions,
JALR relative to a register holding the code base, and loads/stores at arbitrary (also misaligned) offsets
from a base register that points into the data region.
"""
import random

from rvleak.isa import CODE_BASE, DATA_BASE, HALT_WORD, NOP, Program, decode, make
from rvleak.testgen import load_imm

R_OPS = ("ADD", "SUB", "SLL", "SLT", "SLTU", "XOR", "SRL", "SRA", "OR", "AND",
         "MUL", "MULH", "MULHSU", "MULHU", "DIV", "DIVU", "REM", "REMU")
I_OPS = ("ADDI", "SLTI", "SLTIU", "XORI", "ORI", "ANDI")
SHIFTS = ("SLLI", "SRLI", "SRAI")
LOADS = ("LB", "LH", "LW", "LBU", "LHU")
STORES = ("SB", "SH", "SW")
BRANCHES = ("BEQ", "BNE", "BLT", "BGE", "BLTU", "BGEU")
BASE = 31  # never overwritten; points at the data region
LINK = 30  # holds CODE_BASE; JALR targets are absolute offsets from it


def _value(rng):
    return rng.choice((rng.getrandbits(32), rng.getrandbits(8), rng.randrange(-4, 5) & 0xFFFFFFFF,
                       rng.getrandbits(16) << 16))


def random_program(seed, length=40):
    rng = random.Random(f"prog:{seed}")
    regs = range(1, 30)
    code = []
    for r in regs:
        code += load_imm(r, _value(rng))
    code += load_imm(BASE, DATA_BASE + 0x400)
    code += load_imm(LINK, CODE_BASE)
    body = []
    while len(body) < length:
        k = rng.random()
        rd, a, b = rng.choice(regs), rng.choice(regs), rng.choice(regs)
        if k < 0.35:
            body.append(make(rng.choice(R_OPS), rd, a, b))
        elif k < 0.5:
            body.append(make(rng.choice(I_OPS), rd, a, None, rng.randint(-2048, 2047)))
        elif k < 0.55:
            body.append(make(rng.choice(SHIFTS), rd, a, None, rng.randrange(32)))
        elif k < 0.58:
            body.append(make(rng.choice(("LUI", "AUIPC")), rd, imm=rng.randint(-(1 << 19), (1 << 19) - 1) << 12))
        elif k < 0.7:
            body.append(make(rng.choice(LOADS), rd, BASE, None, rng.randint(-0x400, 0x3FB)))
        elif k < 0.8:
            body.append(make(rng.choice(STORES), None, BASE, b, rng.randint(-0x400, 0x3FB)))
        elif k < 0.92:
            body.append(make(rng.choice(BRANCHES), None, a, b, 4 * rng.randint(1, 4)))
        elif k < 0.96:
            body.append(make("JAL", rng.choice((0, rd)), imm=4 * rng.randint(1, 3)))
        else:
            here = len(code) + len(body)
            body.append(make("JALR", rng.choice((0, rd)), LINK, None, 4 * (here + rng.randint(1, 3))))
    # forward targets reach at most 4 instructions ahead; keep them inside the image
    return Program.from_insts(code + body + [NOP] * 4 + [decode(HALT_WORD)])
