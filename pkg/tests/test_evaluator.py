import pytest
from hypothesis import given, strategies as st

from rvleak.evaluator import (EvalResult, Metrics, attacker_distinguishable, check_satisfaction, evaluate,
                              evaluate_suite, generator_effectiveness, score)
from rvleak.isa import HALT_WORD, NOP, Program, decode, make
from rvleak.template import Contract, build_template
from rvleak.testgen import GenConfig, TestCase, gen_suite, load_imm
from rvleak.uarch import preset

T = build_template()


def case(a, b, tid="t"):
    halt = [decode(HALT_WORD)]
    return TestCase(tid, "X:Y", Program.from_insts(a + halt), Program.from_insts(b + halt), (0,) * 32, 0)


def test_attacker_examples():
    assert not attacker_distinguishable([5, 6, 9], [5, 6, 9])
    assert attacker_distinguishable([5, 6, 9], [5, 6, 10])
    assert attacker_distinguishable([5, 6], [5, 6, 9])


def test_identical_programs():
    p = load_imm(1, 77) + [make("DIV", 3, 1, 1), NOP]
    r = evaluate(case(p, p), preset("ibex-like"), T)
    assert not r.attacker_distinguishable and not r.distinguishing_atoms


def test_divisor_leak():
    a = load_imm(1, 0x7FFFFFFF) + load_imm(2, 3) + [make("DIV", 3, 1, 2), NOP]
    b = load_imm(1, 0x7FFFFFFF) + load_imm(2, 0x40000000) + [make("DIV", 3, 1, 2), NOP]
    r = evaluate(case(a, b), preset("ibex-like"), T)
    assert r.attacker_distinguishable
    assert "DIV:REG_RS2" in r.distinguishing_atoms
    assert not evaluate(case(a, b), preset("baseline"), T).attacker_distinguishable


def test_dead_register_write():
    a = load_imm(9, 5) + [NOP, NOP]
    b = load_imm(9, 6) + [NOP, NOP]
    r = evaluate(case(a, b), preset("baseline"), T)
    assert not r.attacker_distinguishable
    assert "ADDI:REG_RD" in r.distinguishing_atoms and "ADDI:IMM" in r.distinguishing_atoms


def test_truncated_cases_are_flagged_and_skipped():
    p = [NOP] * 30
    r = evaluate(case(p, p + [NOP]), preset("baseline"), T, max_cycles=10)
    assert r.truncated and not r.attacker_distinguishable
    assert score(T.ids, [r]) == Metrics(0, 0, 0, 0)
    assert check_satisfaction(set(), [r]) == []


def test_suite_parallelism_and_empty():
    s = gen_suite(2, T, 24)
    cfg = preset("cva6-like")
    assert evaluate_suite(s, cfg, T, parallelism=1) == evaluate_suite(s, cfg, T, parallelism=3)
    assert evaluate_suite([], cfg, T) == []


def test_no_leak_baseline_on_data_only_pairs():
    s = gen_suite(4, T, 200, GenConfig(families=("RL", "ML", "AL"), data_only=True))
    results = evaluate_suite(s, preset("baseline"), T)
    assert not any(r.attacker_distinguishable for r in results)
    assert generator_effectiveness(results) > 0.95


def test_metric_formulas():
    m = Metrics(tp=3, fp=1, fn=0, tn=5)
    assert m.precision == 0.75 and m.sensitivity == 1.0 and m.total == 9
    assert Metrics(tp=2, fp=0, fn=2, tn=0).sensitivity == 0.5
    assert Metrics(0, 0, 4, 1).precision is None
    assert Metrics(0, 3, 0, 1).sensitivity is None


def R(tid, atk, atoms):
    return EvalResult(tid, atk, frozenset(atoms))


RESULTS = [R("a", True, {"X"}), R("b", True, {"X", "Y"}), R("c", False, {"Y"}), R("d", False, set()),
           R("e", True, {"Z"})]


def test_score_examples():
    assert score({"X"}, RESULTS) == Metrics(tp=2, fp=0, fn=1, tn=2)
    assert score({"Y", "Z"}, RESULTS) == Metrics(tp=2, fp=1, fn=1, tn=1)
    assert score(set(), RESULTS) == Metrics(tp=0, fp=0, fn=3, tn=2)
    assert score({"X", "Y", "Z"}, RESULTS).fn == 0
    assert score(Contract(T, {"ADD:OP"}), RESULTS) == Metrics(0, 0, 3, 2)


def test_check_satisfaction_examples():
    assert check_satisfaction({"X", "Y", "Z"}, RESULTS) == []
    assert check_satisfaction(set(), RESULTS) == ["a", "b", "e"]
    assert check_satisfaction({"X"}, RESULTS) == ["e"]


results_st = st.lists(st.tuples(st.booleans(), st.sets(st.sampled_from("ABCDE"))), max_size=30).map(
    lambda xs: [R(f"t{i}", a, s) for i, (a, s) in enumerate(xs)])
contracts = st.sets(st.sampled_from("ABCDE"))


@given(results_st, contracts, contracts)
def test_score_properties(results, s, extra):
    m, big = score(s, results), score(s | extra, results)
    assert m.total == len(results)
    assert big.tp >= m.tp and big.fp >= m.fp
    assert (check_satisfaction(s, results) == []) == (m.fn == 0)
    assert len(check_satisfaction(s, results)) == m.fn


def test_generator_effectiveness():
    rs = [EvalResult("a", False, frozenset({"X"}), target_atom="X"),
          EvalResult("b", False, frozenset(), target_atom="X"), R("c", False, set())]
    assert generator_effectiveness(rs) == 0.5
    assert generator_effectiveness([]) is None
