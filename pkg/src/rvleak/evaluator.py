"""Evaluation of test cases against a microarchitecture and the contract template.

For each pair we record whether a retirement-timing attacker can tell the two
runs apart and which template atoms would tell them apart from their
architectural traces alone.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

from .template import Contract, Template, distinguishing_atoms
from .testgen import Suite, TestCase
from .uarch import UarchConfig, UarchTrace, attacker_trace, simulate

DEFAULT_MAX_CYCLES = 100_000


@dataclass(frozen=True)
class EvalResult:
    testcase_id: str
    attacker_distinguishable: bool
    distinguishing_atoms: frozenset[str]
    truncated: bool = False
    target_atom: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "distinguishing_atoms", frozenset(self.distinguishing_atoms))


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def precision(self) -> Optional[float]:
        """TP / (TP + FP); None when no case is contract-distinguishable."""
        d = self.tp + self.fp
        return self.tp / d if d else None

    @property
    def sensitivity(self) -> Optional[float]:
        """TP / (TP + FN); None when no case is attacker-distinguishable."""
        d = self.tp + self.fn
        return self.tp / d if d else None

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def attacker_distinguishable(t1: Sequence[int], t2: Sequence[int]) -> bool:
    """True iff the two retirement-cycle sequences differ in length or in any element."""
    return tuple(t1) != tuple(t2)


def compare_traces(testcase_id: str, ua: UarchTrace, ub: UarchTrace, template: Template,
                   target_atom: Optional[str] = None) -> EvalResult:
    """Shared by in-memory evaluation and file ingestion."""
    truncated = ua.truncated or ub.truncated
    atk = attacker_distinguishable(attacker_trace(ua), attacker_trace(ub))
    atoms = distinguishing_atoms(ua.events, ub.events, template)
    return EvalResult(testcase_id, atk and not truncated, frozenset(atoms), truncated, target_atom)


def evaluate(tc: TestCase, config: UarchConfig, template: Template,
             max_cycles: int = DEFAULT_MAX_CYCLES) -> EvalResult:
    """Simulate both programs from the same reset state and compare them.

    A truncated simulation is flagged on the result (its attacker bit is forced
    to False) and excluded from every tally downstream.
    """
    ua = simulate(tc.program_a, tc.init_regs, config, max_cycles)
    ub = simulate(tc.program_b, tc.init_regs, config, max_cycles)
    return compare_traces(tc.id, ua, ub, template, tc.target_atom)


def _eval_chunk(args):
    cases, config, template, max_cycles = args
    return [evaluate(tc, config, template, max_cycles) for tc in cases]


def evaluate_suite(suite: Union[Suite, Sequence[TestCase]], config: UarchConfig, template: Template,
                   parallelism: int = 1, max_cycles: int = DEFAULT_MAX_CYCLES) -> list[EvalResult]:
    """Order-preserving batch evaluation; the output does not depend on ``parallelism``."""
    cases = list(suite.testcases if isinstance(suite, Suite) else suite)
    if parallelism <= 1 or len(cases) < 2:
        return [evaluate(tc, config, template, max_cycles) for tc in cases]
    n_chunks = min(len(cases), parallelism * 4)
    size = -(-len(cases) // n_chunks)
    chunks = [(cases[i:i + size], config, template, max_cycles) for i in range(0, len(cases), size)]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        return [r for part in pool.map(_eval_chunk, chunks) for r in part]


def _selected(contract: Union[Contract, Iterable[str]]) -> frozenset[str]:
    return contract.selected if isinstance(contract, Contract) else frozenset(contract)


def score(contract: Union[Contract, Iterable[str]], results: Iterable[EvalResult]) -> Metrics:
    """Tabulate contract verdicts against attacker verdicts; truncated cases are skipped."""
    sel = _selected(contract)
    tp = fp = fn = tn = 0
    for r in results:
        if r.truncated:
            continue
        c = not sel.isdisjoint(r.distinguishing_atoms)
        if r.attacker_distinguishable:
            if c:
                tp += 1
            else:
                fn += 1
        elif c:
            fp += 1
        else:
            tn += 1
    return Metrics(tp, fp, fn, tn)


def check_satisfaction(contract: Union[Contract, Iterable[str]], results: Iterable[EvalResult]) -> list[str]:
    """Ids of attacker-distinguishable cases the contract fails to distinguish (false negatives)."""
    sel = _selected(contract)
    return [r.testcase_id for r in results
            if not r.truncated and r.attacker_distinguishable and sel.isdisjoint(r.distinguishing_atoms)]


def generator_effectiveness(results: Iterable[EvalResult]) -> Optional[float]:
    """Fraction of evaluated cases whose target atom distinguishes the generated pair."""
    hit = total = 0
    for r in results:
        if r.target_atom is None:
            continue
        total += 1
        hit += r.target_atom in r.distinguishing_atoms
    return hit / total if total else None
