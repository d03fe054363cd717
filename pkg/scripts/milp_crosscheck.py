"""Cross-check the exact solver against an integer program solved by scipy's HiGHS.

Reads a results file written by ``rvleak eval`` and solves the same covering
problem twice. The MILP minimizes (|atoms| + 1) * FP + |selected|, which
orders solutions by false positives first and contract size second.

    python scripts/milp_crosscheck.py results.json [--node-budget N]

Needs scipy (``pip install .[experiments]``).
"""
import argparse
import time

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp
from scipy.sparse import lil_matrix

from rvleak.synth import DEFAULT_NODE_BUDGET, build_problem, solve_exact
from rvleak.traceio import read_results


def solve_milp(problem):
    atoms = list(problem.atoms)
    col = {a: k for k, a in enumerate(atoms)}
    indist = sorted(t for t in problem.indist if problem.distinguishing[t])
    n, m = len(atoms), len(indist)
    dist = sorted(problem.dist)
    rows = len(dist) + sum(len(problem.distinguishing[t]) for t in indist)
    A = lil_matrix((rows, n + m))
    lo = np.zeros(rows)
    r = 0
    for t in dist:  # every distinguishable case is covered
        for a in problem.distinguishing[t]:
            A[r, col[a]] = 1
        lo[r] = 1
        r += 1
    for j, t in enumerate(indist):  # y_j >= x_a for each atom that fires on indist case j
        for a in problem.distinguishing[t]:
            A[r, n + j], A[r, col[a]] = 1, -1
            r += 1
    c = np.concatenate([np.ones(n), np.full(m, n + 1.0)])
    res = milp(c, constraints=LinearConstraint(A.tocsr(), lo, np.inf), integrality=np.ones(n + m),
               bounds=Bounds(0, 1))
    if not res.success:
        raise RuntimeError(res.message)
    x = res.x[:n] > 0.5
    selected = {a for a, on in zip(atoms, x) if on}
    return selected, len(problem.fp_tests(selected))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("results")
    ap.add_argument("--node-budget", type=int, default=DEFAULT_NODE_BUDGET)
    args = ap.parse_args()

    rf, _ = read_results(args.results)
    problem = build_problem(rf.results, rf.template.ids)
    t0 = time.time()
    exact = solve_exact(problem, args.node_budget)
    t1 = time.time()
    selected, fp = solve_milp(problem)
    t2 = time.time()
    print(f"exact: fp={exact.fp_count} atoms={len(exact.selected)} optimal={exact.optimal} "
          f"nodes={exact.nodes} {t1 - t0:.1f}s")
    print(f"milp:  fp={fp} atoms={len(selected)} {t2 - t1:.1f}s")
    print("agree" if (fp, len(selected)) == (exact.fp_count, len(exact.selected)) else "DISAGREE")


if __name__ == "__main__":
    main()
