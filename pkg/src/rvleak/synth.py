"""Contract synthesis as red-blue set covering.

Every attacker-distinguishable test case (red) must be covered by at least one
selected atom that distinguishes it; the objective is to cover as few
attacker-indistinguishable cases (blue) as possible. Ties are broken by the
number of selected atoms.

Sets of test cases are Python ints used as bitsets.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping, Optional

from .evaluator import EvalResult

DEFAULT_NODE_BUDGET = 20_000
BRUTE_FORCE_LIMIT = 20


class Infeasible(ValueError):
    pass


class TooLarge(ValueError):
    pass


@dataclass(frozen=True)
class InfeasibleCase:
    testcase_id: str
    reason: str = "attacker-distinguishable but no template atom distinguishes it"


@dataclass(frozen=True)
class SynthesisProblem:
    atoms: tuple[str, ...]
    dist: frozenset[str]
    indist: frozenset[str]
    distinguishing: Mapping[str, frozenset[str]]
    infeasible: tuple[InfeasibleCase, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(sorted(set(self.atoms))))
        object.__setattr__(self, "dist", frozenset(self.dist))
        object.__setattr__(self, "indist", frozenset(self.indist))
        object.__setattr__(self, "distinguishing",
                           {t: frozenset(self.distinguishing.get(t, ())) for t in self.dist | self.indist})
        if self.dist & self.indist:
            raise ValueError("dist and indist overlap")
        known = set(self.atoms)
        for t, atoms in self.distinguishing.items():
            if not atoms <= known:
                raise ValueError(f"{t} references atoms outside the universe: {sorted(atoms - known)[:3]}")

    def fp_tests(self, selected: Iterable[str]) -> frozenset[str]:
        sel = frozenset(selected)
        return frozenset(t for t in self.indist if not sel.isdisjoint(self.distinguishing[t]))

    def uncovered(self, selected: Iterable[str]) -> frozenset[str]:
        sel = frozenset(selected)
        return frozenset(t for t in self.dist if sel.isdisjoint(self.distinguishing[t]))


@dataclass(frozen=True)
class SynthesisResult:
    selected: frozenset[str]
    false_positive_tests: frozenset[str]
    fp_count: int
    optimal: bool
    solver: str
    nodes: int = 0
    node_budget: Optional[int] = None
    atom_ranking: tuple[tuple[str, tuple[str, ...]], ...] = field(default=())


def build_problem(results: Iterable[EvalResult], atoms: Optional[Iterable[str]] = None) -> SynthesisProblem:
    """Partition results into dist/indist; truncated cases are dropped.

    Distinguishable cases that no atom explains are excluded and listed in
    ``problem.infeasible``.
    """
    results = [r for r in results if not r.truncated]
    dist, indist, infeasible = set(), set(), []
    dmap: dict[str, frozenset[str]] = {}
    if atoms is None:
        universe = tuple(sorted(set().union(*(r.distinguishing_atoms for r in results))))
    else:
        universe = tuple(atoms)
    known = frozenset(universe)
    for r in results:
        # atoms outside a restricted template cannot explain anything
        found = r.distinguishing_atoms & known
        if r.attacker_distinguishable:
            if not found:
                infeasible.append(InfeasibleCase(r.testcase_id))
                continue
            dist.add(r.testcase_id)
        else:
            indist.add(r.testcase_id)
        dmap[r.testcase_id] = found
    return SynthesisProblem(universe, frozenset(dist), frozenset(indist), dmap, tuple(infeasible))


# ---------------------------------------------------------------------------
# bitset compilation


class _Compiled:
    """Per-atom bitsets over dist rows (D) and indist columns (I)."""

    def __init__(self, problem: SynthesisProblem):
        self.dist_ids = sorted(problem.dist)
        self.indist_ids = sorted(problem.indist)
        d_index = {t: i for i, t in enumerate(self.dist_ids)}
        i_index = {t: i for i, t in enumerate(self.indist_ids)}
        D: dict[str, int] = {a: 0 for a in problem.atoms}
        I: dict[str, int] = {a: 0 for a in problem.atoms}
        for t, atoms in problem.distinguishing.items():
            if t in d_index:
                bit = 1 << d_index[t]
                for a in atoms:
                    D[a] |= bit
            else:
                bit = 1 << i_index[t]
                for a in atoms:
                    I[a] |= bit
        self.D, self.I = D, I
        self.full = (1 << len(self.dist_ids)) - 1
        covered = 0
        for a in problem.atoms:
            covered |= D[a]
        if covered != self.full:
            missing = [self.dist_ids[i] for i in range(len(self.dist_ids)) if not covered >> i & 1]
            raise Infeasible(f"{len(missing)} distinguishable cases have no distinguishing atom, e.g. {missing[0]}")
        # atoms that distinguish no dist case can only add false positives
        self.useful = sorted(a for a in problem.atoms if D[a])


def _popcount(x: int) -> int:
    return x.bit_count()


def _finish(problem: SynthesisProblem, selected: Iterable[str], optimal: bool, solver: str, nodes: int = 0,
            node_budget: Optional[int] = None) -> SynthesisResult:
    sel = frozenset(selected)
    if problem.uncovered(sel):
        raise AssertionError("solver returned a selection that leaves distinguishable cases uncovered")
    fps = problem.fp_tests(sel)
    result = SynthesisResult(sel, fps, len(fps), optimal, solver, nodes, node_budget)
    return SynthesisResult(**{**result.__dict__, "atom_ranking": rank_atoms(problem, result)})


# ---------------------------------------------------------------------------
# greedy


def _greedy(atoms: list[str], D: dict, I: dict, target: int) -> list[str]:
    covered, fp, chosen = 0, 0, []
    pool = sorted(atoms)
    while covered != target:
        best, best_key = None, None
        for a in pool:
            nd = _popcount(D[a] & target & ~covered)
            if not nd:
                continue
            ni = _popcount(I[a] & ~fp)
            # maximize nd / (1 + ni); compare by cross-multiplication, first id wins ties
            if best is None or nd * (1 + best_key[1]) > best_key[0] * (1 + ni):
                best, best_key = a, (nd, ni)
        if best is None:
            raise Infeasible("greedy cannot cover the remaining cases")
        chosen.append(best)
        covered |= D[best]
        fp |= I[best]
    return chosen


def solve_greedy(problem: SynthesisProblem) -> SynthesisResult:
    """Ratio greedy: newly covered dist over one plus newly covered indist, ties by atom id."""
    c = _Compiled(problem)
    chosen = _greedy(c.useful, c.D, c.I, c.full)
    return _finish(problem, chosen, optimal=False, solver="greedy")


# ---------------------------------------------------------------------------
# exact branch and bound
#
# Inside the search, atoms are indices into a sorted id list, a row (dist case)
# is the bitset of its candidate atoms, and I[i] is atom i's bitset of indist
# columns.


class _BudgetExceeded(Exception):
    pass


def _bits(x: int):
    while x:
        low = x & -x
        yield low.bit_length() - 1
        x ^= low


def _reduce(rows: list[int], I: list[int], n_atoms: int):
    """Shrink a covering instance without changing its optimal false-positive count.

    Applies until fixpoint: rows with a single candidate force it; a row whose
    candidates include all of another row's is dropped; an atom covering a
    subset of another's rows at no more new false positives is dropped. None
    of these steps can increase the number of selected atoms either. Returns
    (forced atom mask, paid columns, remaining rows).
    """
    forced = 0
    fp = 0
    rows = sorted(set(rows))
    while True:
        changed = False
        keep = [r for r in rows if not r & forced]
        # row dominance: covering a row with fewer candidates covers every superset row
        keep.sort(key=lambda r: (r.bit_count(), r))
        kept: list[int] = []
        for r in keep:
            if any(k & ~r == 0 for k in kept):
                changed = True
                continue
            kept.append(r)
        rows = kept
        # atom dominance
        atom_rows = [0] * n_atoms
        live = 0
        for j, r in enumerate(rows):
            live |= r
            for a in _bits(r):
                atom_rows[a] |= 1 << j
        order = sorted(_bits(live), key=lambda a: (-atom_rows[a].bit_count(),
                                                   (I[a] & ~fp).bit_count(), a))
        dominated = 0
        survivors: list[int] = []
        for a in order:
            ra, ia = atom_rows[a], I[a] & ~fp
            if any(ra & ~atom_rows[b] == 0 and (I[b] & ~fp) & ~ia == 0 for b in survivors):
                dominated |= 1 << a
            else:
                survivors.append(a)
        if dominated:
            changed = True
            rows = [r & ~dominated for r in rows]
        for r in rows:
            if r & (r - 1) == 0:
                forced |= r
                fp |= I[r.bit_length() - 1]
                changed = True
        if not changed:
            return forced, fp, rows


def _components(rows: list[int], I: list[int], fp: int) -> list[list[int]]:
    """Group rows into independent subproblems: linked by a shared candidate or a shared unpaid column."""
    parent = list(range(len(rows)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    owner: dict[tuple[str, int], int] = {}
    for j, r in enumerate(rows):
        for a in _bits(r):
            keys = [("a", a)] + [("c", c) for c in _bits(I[a] & ~fp)]
            for k in keys:
                if k in owner:
                    x, y = find(j), find(owner[k])
                    if x != y:
                        parent[max(x, y)] = min(x, y)
                else:
                    owner[k] = j
    groups: dict[int, list[int]] = {}
    for j, r in enumerate(rows):
        groups.setdefault(find(j), []).append(r)
    return [groups[k] for k in sorted(groups)]


def _cover_cost(sel: int, I: list[int], fp0: int) -> int:
    fp = fp0
    for a in _bits(sel):
        fp |= I[a]
    return (fp & ~fp0).bit_count()


def _greedy_rows(rows: list[int], I: list[int], fp0: int, start: int = 0, by_cost: bool = False) -> int:
    """Greedy completion of ``start`` to a cover of ``rows``; returns the atom mask."""
    sel = start
    fp = fp0
    for a in _bits(sel):
        fp |= I[a]
    open_rows = [r for r in rows if not r & sel]
    while open_rows:
        gain: dict[int, int] = {}
        for r in open_rows:
            for a in _bits(r):
                gain[a] = gain.get(a, 0) + 1
        best, best_key = None, None
        for a in sorted(gain):
            n, k = gain[a], (I[a] & ~fp).bit_count()
            key = (k, -n) if by_cost else (k / n, -n)
            if best_key is None or key < best_key:
                best, best_key = a, key
        sel |= 1 << best
        fp |= I[best]
        open_rows = [r for r in open_rows if not r >> best & 1]
    return sel


def _prune(sel: int, rows: list[int], I: list[int]) -> int:
    """Drop atoms (costliest first) whose rows stay covered without them."""
    for a in sorted(_bits(sel), key=lambda a: (-I[a].bit_count(), a)):
        rest = sel & ~(1 << a)
        if all(r & rest for r in rows):
            sel = rest
    return sel


def _local_search(sel: int, rows: list[int], I: list[int], fp0: int) -> int:
    """Remove one atom, re-cover greedily under two rules, keep strict (cost, size) improvements."""
    key = (_cover_cost(sel, I, fp0), sel.bit_count())
    improved = True
    while improved:
        improved = False
        for a in sorted(_bits(sel), key=lambda a: (-(I[a] & ~fp0).bit_count(), a)):
            rest = sel & ~(1 << a)
            for by_cost in (False, True):
                cand = _prune(_greedy_rows(rows, I, fp0, rest, by_cost), rows, I)
                ck = (_cover_cost(cand, I, fp0), cand.bit_count())
                if ck < key:
                    sel, key, improved = cand, ck, True
                    break
            if improved:
                break
    return sel


class _Search:
    """Depth-first branch and bound minimizing (new false positives, atoms) over a row set."""

    def __init__(self, rows: list[int], I: list[int], fp0: int, budget: int):
        self.rows = rows
        self.I = [x & ~fp0 for x in I]
        self.budget = budget
        self.nodes = 0
        init = _local_search(_prune(_greedy_rows(rows, self.I, 0), rows, self.I), rows, self.I, 0)
        self.best = init
        self.best_key = (_cover_cost(init, self.I, 0), init.bit_count())

    def run(self) -> int:
        self._dfs(0, 0, 0, 0)
        return self.best

    def _dfs(self, sel: int, n_sel: int, fp: int, banned: int) -> None:
        self.nodes += 1
        if self.nodes > self.budget:
            raise _BudgetExceeded
        I = self.I
        fp_now = fp.bit_count()
        best_fp, best_card = self.best_key
        lb_extra = 0
        packed = 0
        disjoint = 0
        pick = None
        any_open = False
        for r in self.rows:
            if r & sel:
                continue
            any_open = True
            cands = r & ~banned
            if not cands:
                return
            cheapest = min((I[a] & ~fp).bit_count() for a in _bits(cands))
            if cheapest > lb_extra:
                lb_extra = cheapest
                if fp_now + lb_extra > best_fp:
                    return
            if not cands & packed:
                packed |= cands
                disjoint += 1
            if pick is None or cands.bit_count() < pick.bit_count():
                pick = cands
        if not any_open:
            key = (fp_now, n_sel)
            if key < self.best_key:
                self.best_key, self.best = key, sel
            return
        if (fp_now + lb_extra, n_sel + disjoint) >= (best_fp, best_card):
            return
        ordered = sorted(_bits(pick), key=lambda a: ((I[a] & ~fp).bit_count(), a))
        ban = banned
        for a in ordered:
            self._dfs(sel | 1 << a, n_sel + 1, fp | I[a], ban)
            ban |= 1 << a


def solve_exact(problem: SynthesisProblem, node_budget: int = DEFAULT_NODE_BUDGET) -> SynthesisResult:
    """Minimum false positives, then fewest atoms, by reduction plus branch and bound.

    ``optimal`` is False when the node budget ran out; the returned selection is
    then the best found, which is never worse than the greedy-plus-local-search
    starting point.
    """
    c = _Compiled(problem)
    ids = c.useful
    index = {a: i for i, a in enumerate(ids)}
    I = [c.I[a] for a in ids]
    rows = []
    for j in range(len(c.dist_ids)):
        bit = 1 << j
        rows.append(sum(1 << index[a] for a in ids if c.D[a] & bit))
    forced, fp, core = _reduce(rows, I, len(ids))
    sel = forced
    optimal = True
    nodes = 0
    remaining = node_budget
    for group in _components(core, I, fp):
        search = _Search(group, I, fp, max(remaining, 0))
        try:
            part = search.run()
        except _BudgetExceeded:
            part = search.best
            optimal = False
        nodes += search.nodes
        remaining -= search.nodes
        sel |= part
    if not optimal:
        sel = _prune(sel, rows, I)
    return _finish(problem, [ids[a] for a in _bits(sel)], optimal, "exact", nodes, node_budget)


# ---------------------------------------------------------------------------
# oracle


def brute_force(problem: SynthesisProblem) -> SynthesisResult:
    """Exhaustive search over the atoms that distinguish some dist case.

    Minimal false positives, then fewest atoms, then lexicographically smallest ids.
    """
    c = _Compiled(problem)
    atoms = c.useful
    if len(atoms) > BRUTE_FORCE_LIMIT:
        raise TooLarge(f"{len(atoms)} candidate atoms exceed the brute-force limit of {BRUTE_FORCE_LIMIT}")
    best, best_fp = None, None
    for k in range(len(atoms) + 1):
        for combo in combinations(atoms, k):
            cov = fp = 0
            for a in combo:
                cov |= c.D[a]
                fp |= c.I[a]
            if cov != c.full:
                continue
            n = _popcount(fp)
            if best_fp is None or n < best_fp:
                best, best_fp = combo, n
    return _finish(problem, best, True, "brute-force")


def rank_atoms(problem: SynthesisProblem, result: SynthesisResult) -> tuple[tuple[str, tuple[str, ...]], ...]:
    """Selected atoms by descending false-positive contribution, ties by id, with their test ids."""
    fps = {a: sorted(t for t in problem.indist if a in problem.distinguishing[t]) for a in result.selected}
    order = sorted(fps, key=lambda a: (-len(fps[a]), a))
    return tuple((a, tuple(fps[a])) for a in order)


SOLVERS = ("exact", "greedy", "brute-force")


def solve(problem: SynthesisProblem, solver: str = "exact", node_budget: int = DEFAULT_NODE_BUDGET) -> SynthesisResult:
    if solver == "exact":
        return solve_exact(problem, node_budget)
    if solver == "greedy":
        return solve_greedy(problem)
    if solver == "brute-force":
        return brute_force(problem)
    raise ValueError(f"unknown solver {solver!r}; expected one of {SOLVERS}")
