"""Synthesize contracts for the core presets and write tables, metrics and curves.

For each preset: generate a training and a held-out suite, evaluate both,
synthesize with the exact solver, then write
  <out>/<preset>/report.txt   category table, metrics, family ablation
  <out>/<preset>/curve.csv    held-out precision/sensitivity over training prefixes
  <out>/<preset>/contract.txt one selected atom per line

    python scripts/reproduce_contracts.py --size 10000 --heldout 2000 --out runs/contracts
"""
import argparse
import time
from pathlib import Path

from rvleak.evaluator import evaluate_suite, score
from rvleak.report import category_table, curve, curve_csv, metrics_line
from rvleak.synth import DEFAULT_NODE_BUDGET, build_problem, solve_exact
from rvleak.template import FAMILIES, build_template
from rvleak.testgen import gen_suite
from rvleak.uarch import preset


def ablation(train, heldout, template, budget):
    """Precision and sensitivity with one family removed from the template."""
    rows = []
    for dropped in (None,) + FAMILIES:
        t = template if dropped is None else template.without(dropped)
        problem = build_problem(train, t.ids)
        r = solve_exact(problem, budget)
        m = score(r.selected, heldout)
        rows.append(f"  {'full' if dropped is None else '-' + dropped:<6} atoms={len(r.selected):<4} "
                    f"train_fp={r.fp_count:<6} infeasible={len(problem.infeasible):<5} "
                    + metrics_line("held-out", m))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--presets", default="ibex-like,cva6-like,baseline")
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--size", type=int, default=10_000)
    ap.add_argument("--heldout", type=int, default=2_000)
    ap.add_argument("--node-budget", type=int, default=DEFAULT_NODE_BUDGET)
    ap.add_argument("--points", type=int, default=10)
    ap.add_argument("--out", type=Path, default=Path("runs/contracts"))
    args = ap.parse_args()

    template = build_template()
    train_suite = gen_suite(args.seed, template, args.size)
    held_suite = gen_suite(args.seed + 0x9E3779B9, template, args.heldout)
    for name in args.presets.split(","):
        t0 = time.time()
        cfg = preset(name)
        train = evaluate_suite(train_suite, cfg, template)
        held = evaluate_suite(held_suite, cfg, template)
        result = solve_exact(build_problem(train, template.ids), args.node_budget)
        lines = [f"preset {name}: {sum(r.attacker_distinguishable for r in train)} of {len(train)} training "
                 f"cases attacker-distinguishable",
                 f"contract: {len(result.selected)} atoms, {result.fp_count} training false positives, "
                 f"optimal={result.optimal}", "",
                 category_table(template, result.selected),
                 metrics_line("training", score(result.selected, train)),
                 metrics_line("held-out", score(result.selected, held)),
                 metrics_line("held-out, full template", score(template.ids, held)),
                 "", "family ablation (exact solver, held-out scores):"]
        lines += ablation(train, held, template, args.node_budget)
        d = args.out / name
        d.mkdir(parents=True, exist_ok=True)
        (d / "report.txt").write_text("\n".join(lines) + "\n")
        (d / "contract.txt").write_text("".join(a + "\n" for a in sorted(result.selected)))
        (d / "curve.csv").write_text(curve_csv(curve(train, held, template, "exact", args.node_budget,
                                                     args.points)))
        print("\n".join(lines))
        print(f"[{name}] done in {time.time() - t0:.0f}s -> {d}\n")


if __name__ == "__main__":
    main()
