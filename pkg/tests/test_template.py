import pytest
from hypothesis import given, settings, strategies as st

from rvleak.isa import DATA_BASE, HALT_WORD, NOP, Program, RetiredEvent, decode, make, run_program
from rvleak.template import (FAMILIES, NA, Contract, ContractAtom, NotApplicableError, Template, applicable,
                             applicability_matrix, atom_trace, build_template, contract_distinguishes,
                             contract_observations, distance_of, distinguishing_atoms, family_of, observe)

T = build_template()


def run(insts, regs=None):
    init = [0] * 32
    for r, v in (regs or {}).items():
        init[r] = v
    return run_program(Program.from_insts(list(insts) + [decode(HALT_WORD)]), init)


def ev(inst, **kw):
    return RetiredEvent(0, inst, 0x1000, 0x1004, **kw)


def test_atom_count_by_format():
    # per-format tallies: IL + RL + ML + AL + BL + DL (4 distances per dependency kind)
    r_type = 4 + 3 + 16          # 18 mnemonics
    i_alu = 4 + 2 + 12           # 9 (6 immediate ALU + 3 shifts)
    loads = 4 + 2 + 2 + 2 + 12   # 5
    stores = 4 + 2 + 2 + 2 + 8   # 3
    branches = 4 + 2 + 2 + 8     # 6
    jal, jalr, upper = 3 + 1 + 1 + 8, 4 + 2 + 1 + 12, 3 + 1 + 8
    expected = 18 * r_type + 9 * i_alu + 5 * loads + 3 * stores + 6 * branches + jal + jalr + 2 * upper
    assert expected == 892
    assert len(T) == expected
    assert sum(len(s) for row in applicability_matrix().values() for s in row.values()) == expected


def test_template_examples():
    assert "DIV:REG_RS2" in T and "ADD:REG_RS2" in T
    assert ContractAtom.parse("DIV:REG_RS2").source == ContractAtom.parse("ADD:REG_RS2").source
    assert "ADD:IMM" not in T
    assert "ADD:MEM_R_ADDR" not in T
    assert "ADD:BRANCH_TAKEN" not in T and "JAL:NEW_PC" in T and "JAL:BRANCH_TAKEN" not in T
    assert len(build_template(1)) < len(T) < len(build_template(8))
    with pytest.raises(ValueError):
        build_template(0)
    with pytest.raises(ValueError):
        build_template(9)


def test_template_structure():
    assert len({a.id for a in T.atoms}) == len(T)
    for a in T.atoms:
        assert (a.distance is not None) == (a.family == "DL")
    assert distance_of("RAW_RS1_3") == 3 and distance_of("OP") is None
    assert family_of("WAW_2") == "DL" and family_of("IS_HALF_ALIGNED") == "AL"
    assert all(a.family != "DL" for a in T.without("DL").atoms)
    with pytest.raises(ValueError):
        Template(T.atoms + T.atoms[:1])
    with pytest.raises(ValueError):
        Contract(T, {"ADD:IMM"})


def test_catalog_lines():
    lines = T.catalog().splitlines()
    assert len(lines) == len(T) + 1
    assert "DIV:RAW_RS2_4 DIV RAW_RS2_4 4" in lines
    assert "DIV:REG_RS2 DIV REG_RS2 -" in lines


def test_applicable_examples():
    div = ev(make("DIV", 3, 1, 2), rs1_value=1, rs2_value=7, rd_value=0)
    add = ev(make("ADD", 3, 1, 2), rs1_value=1, rs2_value=7, rd_value=8)
    lw = ev(make("LW", 3, 1, None, 0), rs1_value=DATA_BASE, rd_value=0, mem_read=(DATA_BASE, 4, 0))
    assert applicable(ContractAtom("DIV", "REG_RS2"), div)
    assert not applicable(ContractAtom("DIV", "REG_RS2"), add)
    assert not applicable(ContractAtom("LW", "MEM_W_ADDR"), lw)
    with pytest.raises(NotApplicableError):
        observe(ContractAtom("DIV", "REG_RS2"), add)


def test_alignment_observations():
    for low, word, half in ((4, True, True), (6, False, True), (7, False, False), (5, False, True)):
        e = ev(make("LW", 3, 1, None, 0), mem_read=(DATA_BASE + low, 4, 0))
        assert observe(ContractAtom("LW", "IS_WORD_ALIGNED"), e) is word
        assert observe(ContractAtom("LW", "IS_HALF_ALIGNED"), e) is half


def test_raw_dependency_observation():
    t = run([make("ADDI", 1, 0, None, 5), make("ADD", 3, 1, 2)])
    assert atom_trace(ContractAtom("ADD", "RAW_RS1_1"), t) == [NA, True]
    assert atom_trace(ContractAtom("ADD", "RAW_RS2_1"), t) == [NA, False]
    t = run([make("ADDI", 1, 0, None, 5), NOP, make("ADD", 3, 1, 2)])
    assert atom_trace(ContractAtom("ADD", "RAW_RS1_2"), t) == [NA, NA, True]
    assert atom_trace(ContractAtom("ADD", "RAW_RS1_1"), t) == [NA, NA, False]


def test_x0_is_not_a_dependency():
    t = run([make("ADDI", 0, 0, None, 5), make("ADD", 0, 0, 0)])
    for s in ("RAW_RS1_1", "RAW_RS2_1", "WAW_1", "RAW_RD_1"):
        assert atom_trace(ContractAtom("ADD", s), t)[1] is False


def test_waw_and_war():
    t = run([make("ADD", 5, 6, 7), make("ADDI", 5, 0, None, 1), make("ADDI", 6, 0, None, 1)])
    assert atom_trace(ContractAtom("ADDI", "WAW_1"), t)[1] is True
    # RAW_RD: the earlier ADD read x6, which this ADDI now writes
    assert atom_trace(ContractAtom("ADDI", "RAW_RD_2"), t)[2] is True
    assert atom_trace(ContractAtom("ADDI", "RAW_RD_1"), t)[2] is False


def test_atom_trace_examples():
    t = run([NOP] * 5)
    assert atom_trace(ContractAtom("DIV", "REG_RS2"), t) == [NA] * 5
    t = run([NOP, make("DIV", 3, 1, 2), NOP], {1: 100, 2: 7})
    assert atom_trace(ContractAtom("DIV", "REG_RS2"), t) == [NA, 7, NA]
    assert atom_trace(ContractAtom("DIV", "REG_RD"), t) == [NA, 14, NA]


def test_distinguishing_examples():
    prog = [make("DIV", 3, 1, 2)]
    t1, t2 = run(prog, {1: 100, 2: 7}), run(prog, {1: 100, 2: 9})
    assert distinguishing_atoms(t1, t1, T) == set()
    assert distinguishing_atoms(t1, t2, T) == {"DIV:REG_RS2", "DIV:REG_RD"}
    t5, t6 = run(prog, {1: 100, 2: 7}), run(prog, {1: 101, 2: 7})  # quotient stays 14
    assert distinguishing_atoms(t5, t6, T) == {"DIV:REG_RS1"}


def test_unequal_lengths_distinguish_everything():
    t1, t2 = run([NOP, NOP]), run([NOP, make("DIV", 3, 1, 2), NOP])
    got = distinguishing_atoms(t1, t2, T)
    assert {"ADDI:OP", "DIV:OP"} <= got
    assert got == T.ids


def test_contract_observations_examples():
    t = run([make("DIV", 3, 1, 2)], {1: 100, 2: 7})
    assert contract_observations(Contract(T, set()), t) == [frozenset()]
    assert contract_observations(Contract(T, {"DIV:REG_RS2"}), t) == [frozenset({("REG_RS2", 7)})]
    assert contract_observations(Contract(T, {"DIV:REG_RS2", "ADD:REG_RS2"}), t) == [frozenset({("REG_RS2", 7)})]


def _brute_distinguishing(t1, t2, template):
    """Per-atom comparison of observation traces (the defining formula)."""
    return {a.id for a in template.atoms
            if atom_trace(a, t1, template.max_dependency_distance) != atom_trace(a, t2, template.max_dependency_distance)}


SMALL = ("ADD", "SUB", "MUL", "DIV", "REMU", "ADDI", "SLLI", "XOR", "LUI", "SLT")


@st.composite
def small_programs(draw):
    insts = []
    for _ in range(draw(st.integers(1, 7))):
        m = draw(st.sampled_from(SMALL))
        r = st.integers(0, 5)
        if m in ("ADDI", "SLLI"):
            insts.append(make(m, draw(r), draw(r), None, draw(st.integers(0, 31))))
        elif m == "LUI":
            insts.append(make(m, draw(r), imm=draw(st.integers(0, 3)) << 12))
        else:
            insts.append(make(m, draw(r), draw(r), draw(r)))
    return insts


regs = st.dictionaries(st.integers(1, 5), st.integers(0, 0xFFFFFFFF), max_size=5)


@settings(max_examples=80, deadline=None)
@given(small_programs(), small_programs(), regs, regs)
def test_distinguishing_matches_per_atom_definition(p1, p2, r1, r2):
    t1, t2 = run(p1, r1), run(p2, r2)
    got = distinguishing_atoms(t1, t2, T)
    assert got == _brute_distinguishing(t1, t2, T)
    assert got == distinguishing_atoms(t2, t1, T)  # symmetry


@settings(max_examples=60, deadline=None)
@given(small_programs(), regs, regs)
def test_dl_depends_only_on_structure(prog, r1, r2):
    t1, t2 = run(prog, r1), run(prog, r2)
    assert not any(ContractAtom.parse(a).family == "DL" for a in distinguishing_atoms(t1, t2, T))


@settings(max_examples=60, deadline=None)
@given(small_programs(), small_programs(), regs, st.sets(st.sampled_from(sorted(T.ids)), max_size=40),
       st.sets(st.sampled_from(sorted(T.ids)), max_size=40))
def test_contract_monotonicity(p1, p2, r, s, extra):
    d = distinguishing_atoms(run(p1, r), run(p2, r), T)
    small, big = Contract(T, s), Contract(T, s | extra)
    if contract_distinguishes(small, d):
        assert contract_distinguishes(big, d)


def test_families_partition_sources():
    seen = {}
    for a in T.atoms:
        seen.setdefault(a.family, set()).add(a.source)
    assert set(seen) == set(FAMILIES)
