"""Assemble sample RV32IM instructions with clang and freeze the encodings.

The output (tests/data/reference_encodings.json) is the independent oracle
for the encoder/decoder tests. Requires a clang with the riscv32 target.

    python scripts/freeze_reference_encodings.py
"""
import json
import random
import struct
import subprocess
import tempfile
from pathlib import Path

R = ["ADD", "SUB", "SLL", "SLT", "SLTU", "XOR", "SRL", "SRA", "OR", "AND",
     "MUL", "MULH", "MULHSU", "MULHU", "DIV", "DIVU", "REM", "REMU"]
I = ["ADDI", "SLTI", "SLTIU", "XORI", "ORI", "ANDI"]
SH = ["SLLI", "SRLI", "SRAI"]
LD = ["LB", "LH", "LW", "LBU", "LHU"]
ST = ["SB", "SH", "SW"]
BR = ["BEQ", "BNE", "BLT", "BGE", "BLTU", "BGEU"]


def samples(rng):
    reg = lambda: rng.randrange(32)
    out = []
    for _ in range(6):
        for m in R:
            f = dict(rd=reg(), rs1=reg(), rs2=reg())
            out.append((m, f, f"{m.lower()} x{f['rd']}, x{f['rs1']}, x{f['rs2']}"))
        for m in I:
            f = dict(rd=reg(), rs1=reg(), imm=rng.randint(-2048, 2047))
            out.append((m, f, f"{m.lower()} x{f['rd']}, x{f['rs1']}, {f['imm']}"))
        for m in SH:
            f = dict(rd=reg(), rs1=reg(), imm=rng.randrange(32))
            out.append((m, f, f"{m.lower()} x{f['rd']}, x{f['rs1']}, {f['imm']}"))
        for m in LD + ["JALR"]:
            f = dict(rd=reg(), rs1=reg(), imm=rng.randint(-2048, 2047))
            out.append((m, f, f"{m.lower()} x{f['rd']}, {f['imm']}(x{f['rs1']})"))
        for m in ST:
            f = dict(rs1=reg(), rs2=reg(), imm=rng.randint(-2048, 2047))
            out.append((m, f, f"{m.lower()} x{f['rs2']}, {f['imm']}(x{f['rs1']})"))
        for m in BR:
            f = dict(rs1=reg(), rs2=reg(), imm=2 * rng.randint(-2048, 2047))
            out.append((m, f, f"{m.lower()} x{f['rs1']}, x{f['rs2']}, {f['imm']}"))
        for m in ["LUI", "AUIPC"]:
            up = rng.randrange(1 << 20)
            f = dict(rd=reg(), imm=(up << 12) - (1 << 32) if up >> 19 else up << 12)
            out.append((m, f, f"{m.lower()} x{f['rd']}, {up}"))
        f = dict(rd=reg(), imm=2 * rng.randint(-(1 << 19), (1 << 19) - 1))
        out.append(("JAL", f, f"jal x{f['rd']}, {f['imm']}"))
    return out


def text_words(obj: bytes):
    shoff = struct.unpack_from("<I", obj, 0x20)[0]
    shentsize, shnum, shstrndx = struct.unpack_from("<HHH", obj, 0x2E)
    secs = [struct.unpack_from("<IIIIIIIIII", obj, shoff + i * shentsize) for i in range(shnum)]
    strtab = secs[shstrndx][4]
    for s in secs:
        name = obj[strtab + s[0]:].split(b"\0", 1)[0]
        if name == b".text":
            return [w for (w,) in struct.iter_unpack("<I", obj[s[4]:s[4] + s[5]])]
    raise RuntimeError("no .text section")


def main():
    rng = random.Random(20240117)
    cases = samples(rng)
    with tempfile.TemporaryDirectory() as tmp:
        src = Path(tmp) / "s.s"
        src.write_text("\n".join(c[2] for c in cases) + "\n")
        subprocess.run(["clang", "--target=riscv32", "-march=rv32im", "-c", str(src), "-o", f"{tmp}/s.o"], check=True)
        words = text_words(Path(f"{tmp}/s.o").read_bytes())
    assert len(words) == len(cases)
    rows = [dict(mnemonic=m, asm=asm, word=f"0x{w:08x}", **f) for (m, f, asm), w in zip(cases, words)]
    out = Path(__file__).resolve().parents[1] / "tests" / "data" / "reference_encodings.json"
    out.write_text(json.dumps(rows, indent=1) + "\n")
    print(f"wrote {len(rows)} encodings to {out}")


if __name__ == "__main__":
    main()
