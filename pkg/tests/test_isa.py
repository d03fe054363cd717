import json
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from rvleak.isa import (BRANCHES, CODE_BASE, DATA_BASE, HALT_FAULT, HALT_FUEL, HALT_SENTINEL, HALT_WORD, LOADS,
                        MNEMONICS, NOP, STORES, ArchState, DecodedInst, FieldOutOfRange, IllegalInstruction,
                        Program, alu, decode, encode, fmt_of, has_field, load_program, make, run, run_program, step)

REFERENCE = json.loads((Path(__file__).parent / "data" / "reference_encodings.json").read_text())
U32 = st.integers(0, 0xFFFFFFFF)


def test_mnemonic_count():
    # the 37 RV32I computational/control/memory instructions plus the 8 of M
    assert len(MNEMONICS) == 45
    assert len(set(MNEMONICS)) == 45


@pytest.mark.parametrize("entry", REFERENCE, ids=lambda e: e["asm"])
def test_encoding_matches_assembler(entry):
    fields = {k: entry.get(k) for k in ("rd", "rs1", "rs2", "imm")}
    word = int(entry["word"], 16)
    assert encode(DecodedInst(entry["mnemonic"], **fields)) == word
    d = decode(word)
    assert d.mnemonic == entry["mnemonic"]
    assert (d.rd, d.rs1, d.rs2, d.imm) == tuple(fields[k] for k in ("rd", "rs1", "rs2", "imm"))


def test_reference_covers_every_mnemonic():
    assert {e["mnemonic"] for e in REFERENCE} == set(MNEMONICS)


def test_decode_examples():
    assert decode(0x003100B3) == make("ADD", 1, 2, 3)
    assert (decode(0x003100B3).rd, decode(0x003100B3).rs1, decode(0x003100B3).rs2) == (1, 2, 3)
    nop = decode(0x00000013)
    assert (nop.mnemonic, nop.rd, nop.rs1, nop.imm) == ("ADDI", 0, 0, 0)
    with pytest.raises(IllegalInstruction):
        decode(0xFFFFFFFF)


def test_encode_examples():
    assert encode(DecodedInst("ADDI", 0, 0, None, 0)) == 0x13
    assert encode(DecodedInst("ADD", 1, 2, 3)) == 0x003100B3
    with pytest.raises(FieldOutOfRange):
        encode(DecodedInst("BEQ", None, 1, 2, 1))
    with pytest.raises(FieldOutOfRange):
        encode(DecodedInst("ADDI", 1, 1, None, 2048))


def _imm_strategy(m):
    f = fmt_of(m)
    if f == "SH":
        return st.integers(0, 31)
    if f in ("I", "S"):
        return st.integers(-2048, 2047)
    if f == "B":
        return st.integers(-2048, 2047).map(lambda x: 2 * x)
    if f == "U":
        return st.integers(-(1 << 19), (1 << 19) - 1).map(lambda x: x << 12)
    if f == "J":
        return st.integers(-(1 << 19), (1 << 19) - 1).map(lambda x: 2 * x)
    return st.none()


@st.composite
def instructions(draw):
    m = draw(st.sampled_from(MNEMONICS))
    reg = st.integers(0, 31)
    fields = {k: (draw(reg) if has_field(m, k) else None) for k in ("rd", "rs1", "rs2")}
    imm = draw(_imm_strategy(m)) if has_field(m, "imm") else None
    return DecodedInst(m, imm=imm, **fields)


@given(instructions())
def test_encode_decode_round_trip(inst):
    word = encode(inst)
    d = decode(word)
    assert (d.mnemonic, d.rd, d.rs1, d.rs2, d.imm) == (inst.mnemonic, inst.rd, inst.rs1, inst.rs2, inst.imm)
    assert d.raw == word
    assert encode(d) == word


def test_u_type_immediates_are_signed():
    d = decode(0x800000B7)  # lui x1, 0x80000
    assert d.imm == -(1 << 31)
    assert encode(make("LUI", 1, None, None, -(1 << 31))) == 0x800000B7


@given(U32)
def test_decode_is_canonical(word):
    try:
        d = decode(word)
    except IllegalInstruction:
        return
    assert encode(d) == word


def _signed(x):
    return x - (1 << 32) if x >> 31 else x


@given(U32, U32)
def test_multiply_matches_integer_product(a, b):
    sa, sb = _signed(a), _signed(b)
    assert alu("MUL", a, b) == (a * b) & 0xFFFFFFFF
    assert alu("MULH", a, b) == ((sa * sb) >> 32) & 0xFFFFFFFF
    assert alu("MULHU", a, b) == (a * b) >> 32
    assert alu("MULHSU", a, b) == ((sa * b) >> 32) & 0xFFFFFFFF


@given(U32, U32)
def test_division_identity(a, b):
    if b == 0:
        assert alu("DIVU", a, b) == 0xFFFFFFFF and alu("REMU", a, b) == a
        assert alu("DIV", a, b) == 0xFFFFFFFF and alu("REM", a, b) == a
        return
    assert alu("DIVU", a, b) * b + alu("REMU", a, b) == a
    sa, sb = _signed(a), _signed(b)
    if sa == -(1 << 31) and sb == -1:
        return
    q, r = _signed(alu("DIV", a, b)), _signed(alu("REM", a, b))
    assert q * sb + r == sa
    assert abs(r) < abs(sb) and (r == 0 or (r < 0) == (sa < 0))  # truncating division


def test_division_conventions():
    # RISC-V M: x/0 = all ones, x%0 = x, signed overflow wraps with remainder 0
    assert alu("DIV", 7, 0) == 0xFFFFFFFF
    assert alu("REM", 7, 0) == 7
    assert alu("DIV", 0x80000000, 0xFFFFFFFF) == 0x80000000
    assert alu("REM", 0x80000000, 0xFFFFFFFF) == 0
    assert alu("DIV", (-7) & 0xFFFFFFFF, 2) == (-3) & 0xFFFFFFFF
    assert alu("REM", (-7) & 0xFFFFFFFF, 2) == (-1) & 0xFFFFFFFF


def _state_with(insts, regs=None):
    prog = Program.from_insts(insts)
    init = [0] * 32
    for r, v in (regs or {}).items():
        init[r] = v
    return load_program(prog, init)


def test_step_div_by_zero():
    s0 = _state_with([make("DIV", 3, 1, 2)], {1: 7, 2: 0})
    s1, ev = step(s0)
    assert ev.rd_value == 0xFFFFFFFF and s1.regs[3] == 0xFFFFFFFF
    assert s0.regs[3] == 0  # input state untouched


def test_step_nop_changes_only_pc():
    s0 = _state_with([NOP], {5: 9})
    s1, ev = step(s0)
    assert s1.pc == s0.pc + 4
    assert s1.regs == s0.regs and s1.mem == s0.mem
    assert ev.rd_value == 0 and ev.mem_read is None and ev.mem_write is None


def test_taken_branch_to_next_instruction():
    s0 = _state_with([make("BEQ", None, 1, 2, 4)], {1: 5, 2: 5})
    _, ev = step(s0)
    assert ev.branch_taken is True
    assert ev.pc_after == ev.pc_before + 4


def test_x0_writes_discarded():
    s0 = _state_with([make("ADDI", 0, 1, None, 5)], {1: 3})
    s1, ev = step(s0)
    assert s1.regs[0] == 0 and ev.rd_value == 0


def test_misaligned_access_is_bytewise():
    addr = DATA_BASE + 0x101
    insts = [make("SW", None, 1, 2, 0), make("LW", 3, 1, None, 0), make("LH", 4, 1, None, 2)]
    t = run_program(Program.from_insts(insts + [decode(HALT_WORD)]), [0, addr, 0x8899AABB] + [0] * 29)
    assert t.halted == HALT_SENTINEL
    assert t.events[0].mem_write == (addr, 4, 0x8899AABB)
    assert t.events[1].mem_read == (addr, 4, 0x8899AABB)
    assert t.events[2].rd_value == 0xFFFF8899  # sign-extended upper half


def test_run_halt_and_fuel():
    prog = Program.from_insts([NOP] * 5 + [decode(HALT_WORD)])
    t = run_program(prog, fuel=10)
    assert len(t) == 5 and t.halted == HALT_SENTINEL
    t = run_program(prog, fuel=3)
    assert len(t) == 3 and t.halted == HALT_FUEL
    with pytest.raises(ValueError):
        run(load_program(prog), 0)


def test_fault_is_recorded():
    t = run_program(Program.from_insts([make("LW", 1, 0, None, 0)]))
    assert t.halted == HALT_FAULT and t.fault and len(t) == 0
    t = run_program(Program((0xFFFFFFFF,)))
    assert t.halted == HALT_FAULT


@st.composite
def programs(draw):
    """Straight-line programs over safe instructions; memory goes through x31 = DATA_BASE."""
    body = []
    safe = [m for m in MNEMONICS if m not in LOADS | STORES | BRANCHES | {"JAL", "JALR", "AUIPC"}]
    for _ in range(draw(st.integers(1, 20))):
        kind = draw(st.integers(0, 3))
        if kind == 0:
            m = draw(st.sampled_from(sorted(LOADS | STORES)))
            imm = draw(st.integers(0, 0x7FF))
            if m in LOADS:
                body.append(make(m, draw(st.integers(1, 30)), 31, None, imm))
            else:
                body.append(make(m, None, 31, draw(st.integers(0, 31)), imm))
        elif kind == 1:
            m = draw(st.sampled_from(sorted(BRANCHES)))
            body.append(make(m, None, draw(st.integers(0, 31)), draw(st.integers(0, 31)), 4))
        else:
            body.append(draw(instructions().filter(lambda i: i.mnemonic in safe and i.rd != 31)))
    return Program.from_insts(body + [decode(HALT_WORD)])


@settings(max_examples=60, deadline=None)
@given(programs(), st.lists(U32, min_size=31, max_size=31))
def test_run_invariants(prog, regs):
    init = [0] + regs[:30] + [DATA_BASE]
    t1 = run_program(prog, init)
    assert t1 == run_program(prog, init)  # determinism
    assert t1.halted == HALT_SENTINEL
    state = load_program(prog, init)
    for i, ev in enumerate(t1.events):
        assert ev.order == i
        state, replay = step(state)
        assert replay == ev
        assert state.regs[0] == 0
        m = ev.inst.mnemonic
        assert (ev.mem_read is not None) == (m in LOADS)
        assert (ev.mem_write is not None) == (m in STORES)
        assert ev.pc_after == ev.pc_before + 4  # taken branches here target the next instruction
        if fmt_of(m) == "R":
            assert ev.rd_value == (alu(m, ev.rs1_value, ev.rs2_value) if ev.inst.rd else 0)


def test_program_image_and_state_copy():
    prog = Program.from_insts([NOP, NOP])
    assert prog.image() == [(CODE_BASE, 0x13), (CODE_BASE + 4, 0x13)]
    s = ArchState()
    c = s.copy()
    c.regs[1] = 5
    c.write(DATA_BASE, 1, 1)
    assert s.regs[1] == 0 and not s.mem
