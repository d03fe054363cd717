"""Command-line driver: gen, validate, eval, synth, report, ingest, pipeline.

Exit codes: 0 success, 1 analysis-level failure, 2 usage or input error.
Outputs default to the directory named by RVLEAK_OUT (else the working
directory) when no explicit path is given.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .evaluator import evaluate_suite, generator_effectiveness, score
from .isa import IllegalInstruction, run_program
from .report import category_table, curve, curve_csv, metrics_line
from .synth import DEFAULT_NODE_BUDGET, SOLVERS, Infeasible, TooLarge, build_problem, solve
from .template import FAMILIES, Template, build_template
from .testgen import GenConfig, UngeneratableAtom, gen_suite
from .traceio import (ContractFile, DigestMismatch, ParseError, ResultsFile, canonical, digest_of, ingest_pair,
                      read_contract, read_results, read_suite, write_contract, write_results, write_suite)
from .uarch import UarchConfig, UnknownPreset, resolve_config

OUT_ENV = "RVLEAK_OUT"
EXIT_OK, EXIT_ANALYSIS, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class AnalysisFailure(Exception):
    pass


def default_out(name: str) -> Path:
    return Path(os.environ.get(OUT_ENV, ".")) / name


def _families(text: str) -> tuple[str, ...]:
    fams = tuple(f.strip().upper() for f in text.split(",") if f.strip())
    bad = [f for f in fams if f not in FAMILIES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown families {bad}; choose from {','.join(FAMILIES)}")
    return fams


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _config(spec: str) -> UarchConfig:
    try:
        return resolve_config(spec)
    except UnknownPreset:
        raise UsageError(f"unknown preset {spec!r}") from None
    except FileNotFoundError:
        raise UsageError(f"config file not found: {spec}") from None
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        raise UsageError(f"bad config {spec}: {exc}") from None


# ---------------------------------------------------------------------------
# stage functions shared by the subcommands and the pipeline


def do_gen(seed: int, count: int, template: Template, cfg: GenConfig, out: Path) -> str:
    try:
        suite = gen_suite(seed, template, count, cfg)
    except UngeneratableAtom as exc:
        raise AnalysisFailure(str(exc)) from None
    if suite.ungeneratable:
        dropped = sum(1 for v in suite.ungeneratable.values() if v >= 3)
        _log(f"ungeneratable: {len(suite.ungeneratable)} atoms failed at least once, {dropped} dropped")
    out.parent.mkdir(parents=True, exist_ok=True)
    return write_suite(suite, template, out)


def do_eval(suite_path: Path, config: UarchConfig, out: Path, parallelism: int = 1) -> str:
    suite, template, digest = read_suite(suite_path)
    results = evaluate_suite(suite, config, template, parallelism)
    eff = generator_effectiveness(results)
    n_dist = sum(r.attacker_distinguishable for r in results)
    _log(f"evaluated {len(results)} cases on {config.preset_name}: {n_dist} attacker-distinguishable"
         + ("" if eff is None else f", generator effectiveness {eff:.4f}"))
    out.parent.mkdir(parents=True, exist_ok=True)
    return write_results(ResultsFile(tuple(results), config, template, digest), out)


def do_synth(results_path: Path, solver: str, node_budget: int, out: Path,
             exclude: Sequence[str] = (), fail_on_infeasible: bool = False) -> str:
    rf, digest = read_results(results_path)
    template = rf.template.without(*exclude) if exclude else rf.template
    problem = build_problem(rf.results, template.ids)
    if problem.infeasible:
        _log(f"{len(problem.infeasible)} distinguishable cases have no distinguishing atom; excluded")
    try:
        result = solve(problem, solver, node_budget)
    except TooLarge as exc:
        raise AnalysisFailure(str(exc)) from None
    except Infeasible as exc:
        raise AnalysisFailure(str(exc)) from None
    _log(f"{solver}: {len(result.selected)} atoms, {result.fp_count} false positives, optimal={result.optimal}")
    out.parent.mkdir(parents=True, exist_ok=True)
    d = write_contract(ContractFile(result, template, digest, problem.infeasible), out)
    if fail_on_infeasible and problem.infeasible:
        raise AnalysisFailure(f"{len(problem.infeasible)} infeasible cases")
    return d


def do_report(contract_path: Path, results_path: Path, out_dir: Path, heldout_path: Optional[Path] = None,
              points: int = 10, curve_solver: Optional[str] = None, node_budget: Optional[int] = None) -> None:
    cf, _ = read_contract(contract_path)
    rf, r_digest = read_results(results_path)
    if cf.results_digest != r_digest:
        raise DigestMismatch(f"contract was synthesized from {cf.results_digest}, not {r_digest}")
    held = None
    if heldout_path is not None:
        held, _ = read_results(heldout_path)
        if held.config != rf.config:
            raise DigestMismatch("held-out results come from a different microarchitecture configuration")
    res = cf.result
    full = cf.template.ids
    lines = [
        f"microarchitecture: {rf.config.preset_name}",
        f"solver: {res.solver} optimal={str(res.optimal).lower()} nodes={res.nodes}",
        f"contract: {len(res.selected)} of {len(cf.template)} atoms, {res.fp_count} training false positives",
        f"infeasible cases: {len(cf.infeasible)}",
        "",
        category_table(cf.template, res.selected),
        metrics_line("training, contract", score(res.selected, rf.results)),
        metrics_line("training, full template", score(full, rf.results)),
    ]
    out_dir.mkdir(parents=True, exist_ok=True)
    if held is None:
        lines.append("notice: no held-out suite; held-out metrics and the curve are omitted")
    else:
        lines.append(metrics_line("held-out, contract", score(res.selected, held.results)))
        lines.append(metrics_line("held-out, full template", score(full, held.results)))
        pts = curve(list(rf.results), list(held.results), cf.template, curve_solver or res.solver,
                    node_budget or res.node_budget or DEFAULT_NODE_BUDGET, points)
        (out_dir / "curve.csv").write_text(curve_csv(pts))
    lines += ["", "atom ranking (false positives caused):"]
    lines += [f"  {a} {len(ts)}" for a, ts in res.atom_ranking]
    (out_dir / "report.txt").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# manifest-driven pipeline


@dataclass
class RunManifest:
    seed: int = 1
    suite_size: int = 1000
    heldout_size: int = 0
    n_max: int = 4
    families: tuple[str, ...] = FAMILIES
    generator: dict = field(default_factory=dict)
    uarch: str = "ibex-like"
    solver: str = "exact"
    node_budget: int = DEFAULT_NODE_BUDGET
    curve_points: int = 10
    output_dir: Optional[str] = None
    parallelism: int = 1

    @classmethod
    def load(cls, path: Path) -> "RunManifest":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise UsageError(f"manifest not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"manifest is not valid JSON: {exc}") from None
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise UsageError(f"unknown manifest keys: {sorted(unknown)}")
        m = cls(**data)
        m.families = tuple(m.families)
        if m.solver not in SOLVERS:
            raise UsageError(f"unknown solver {m.solver!r}")
        if m.suite_size <= 0 or m.heldout_size < 0:
            raise UsageError("suite_size must be positive and heldout_size non-negative")
        return m

    @property
    def heldout_seed(self) -> int:
        return self.seed + 0x9E3779B9

    def gen_config(self) -> GenConfig:
        return GenConfig.from_dict({**self.generator, "families": self.generator.get("families", self.families)})


def _reusable_suite(path: Path, seed: int, count: int, template: Template, cfg: GenConfig) -> Optional[str]:
    try:
        suite, t, digest = read_suite(path)
    except (OSError, ParseError, DigestMismatch, KeyError, ValueError):
        return None
    ok = suite.seed == seed and len(suite.testcases) == count and t == template and suite.config == cfg
    return digest if ok else None


def _reusable_results(path: Path, suite_digest: str, config: UarchConfig) -> Optional[str]:
    try:
        rf, digest = read_results(path)
    except (OSError, ParseError, DigestMismatch, KeyError, ValueError):
        return None
    return digest if rf.suite_digest == suite_digest and rf.config == config else None


def _reusable_contract(path: Path, results_digest: str, solver: str, budget: int) -> Optional[str]:
    try:
        cf, digest = read_contract(path)
    except (OSError, ParseError, DigestMismatch, KeyError, ValueError):
        return None
    r = cf.result
    same = cf.results_digest == results_digest and r.solver == solver
    if solver == "exact":
        same = same and r.node_budget == budget
    return digest if same else None


def run_pipeline(manifest: RunManifest, out_dir: Path) -> dict:
    """Run (or resume) every stage; stage files whose provenance matches are reused."""
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        template = build_template(manifest.n_max, manifest.families)
        cfg = manifest.gen_config()
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    config = _config(manifest.uarch)
    digests = {"uarch": digest_of({"uarch": config.to_dict()})}

    def stage(name, reuse, make):
        d = reuse()
        if d is None:
            d = make()
        else:
            _log(f"{name}: reusing existing file")
        digests[name] = d
        return d

    splits = [("train", manifest.seed, manifest.suite_size)]
    if manifest.heldout_size:
        splits.append(("heldout", manifest.heldout_seed, manifest.heldout_size))
    for split, seed, count in splits:
        sp, rp = out_dir / f"{split}_suite.json", out_dir / f"{split}_results.json"
        sd = stage(f"{split}_suite", lambda: _reusable_suite(sp, seed, count, template, cfg),
                   lambda: do_gen(seed, count, template, cfg, sp))
        stage(f"{split}_results", lambda: _reusable_results(rp, sd, config),
              lambda: do_eval(sp, config, rp, manifest.parallelism))
    cp = out_dir / "contract.json"
    stage("contract", lambda: _reusable_contract(cp, digests["train_results"], manifest.solver, manifest.node_budget),
          lambda: do_synth(out_dir / "train_results.json", manifest.solver, manifest.node_budget, cp))
    do_report(cp, out_dir / "train_results.json", out_dir,
              out_dir / "heldout_results.json" if manifest.heldout_size else None,
              manifest.curve_points, manifest.solver, manifest.node_budget)
    record = {"manifest": {**asdict(manifest), "families": list(manifest.families)}, "digests": digests}
    (out_dir / "run.json").write_text(canonical(record) + "\n")
    return digests


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rvleak", description="Leakage-contract synthesis for RV32IM cores.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a test suite")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--n-max", type=int, default=4, help="largest dependency distance in the template")
    g.add_argument("--families", type=_families, default=FAMILIES, help="comma-separated template families")
    g.add_argument("--gen-families", type=_families, default=None,
                   help="families that get a divergence strategy (default: the template families)")
    g.add_argument("--prologue", choices=("mixed-magnitude", "uniform"), default="mixed-magnitude")
    g.add_argument("--suffix-length", type=int, default=8)
    g.add_argument("--data-only", action="store_true", help="keep only pairs that differ in data values alone")
    g.add_argument("-o", "--out", type=Path, default=None)

    v = sub.add_parser("validate", help="check that every program in a suite halts on the ISA model")
    v.add_argument("suite", type=Path)

    e = sub.add_parser("eval", help="evaluate a suite on a microarchitecture")
    e.add_argument("suite", type=Path)
    e.add_argument("--config", required=True, help="preset name or path to a UarchConfig JSON file")
    e.add_argument("-j", "--parallelism", type=int, default=1)
    e.add_argument("-o", "--out", type=Path, default=None)

    s = sub.add_parser("synth", help="synthesize a contract from evaluation results")
    s.add_argument("results", type=Path)
    s.add_argument("--solver", choices=SOLVERS, default="exact")
    s.add_argument("--node-budget", type=int, default=DEFAULT_NODE_BUDGET)
    s.add_argument("--exclude-families", type=_families, default=(), help="drop these families from the template")
    s.add_argument("--fail-on-infeasible", action="store_true",
                   help="exit 1 if some distinguishable case has no distinguishing atom")
    s.add_argument("-o", "--out", type=Path, default=None)

    r = sub.add_parser("report", help="contract table, metrics and precision/sensitivity curve")
    r.add_argument("contract", type=Path)
    r.add_argument("results", type=Path, help="the training results the contract was synthesized from")
    r.add_argument("--heldout", type=Path, default=None, help="held-out results for metrics and the curve")
    r.add_argument("--points", type=int, default=10, help="number of training-prefix sizes on the curve")
    r.add_argument("-o", "--out", type=Path, default=None, help="output directory")

    i = sub.add_parser("ingest", help="evaluate externally produced RVFI trace pairs")
    i.add_argument("--pair", nargs=2, action="append", metavar=("A", "B"), required=True, type=Path)
    i.add_argument("--config", default=None, help="label the core with a preset or config file")
    i.add_argument("--n-max", type=int, default=4)
    i.add_argument("-o", "--out", type=Path, default=None)

    pl = sub.add_parser("pipeline", help="run gen, eval, synth and report from a manifest")
    pl.add_argument("manifest", type=Path)
    pl.add_argument("-o", "--out", type=Path, default=None, help="output directory (overrides the manifest)")
    return p


def _dispatch(args) -> int:
    if args.command == "gen":
        template = build_template(args.n_max, args.families)
        cfg = GenConfig(prologue_policy=args.prologue, families=args.gen_families or args.families,
                        suffix_length=args.suffix_length, data_only=args.data_only)
        digest = do_gen(args.seed, args.count, template, cfg, args.out or default_out("suite.json"))
        print(digest)
    elif args.command == "validate":
        suite, _, _ = read_suite(args.suite)
        bad = []
        for tc in suite.testcases:
            for side, prog in (("a", tc.program_a), ("b", tc.program_b)):
                trace = run_program(prog, tc.init_regs, suite.config.fuel)
                if not trace.halted or trace.fault is not None:
                    bad.append(f"{tc.id}/{side}")
        if bad:
            raise AnalysisFailure(f"{len(bad)} programs do not halt cleanly: {', '.join(bad[:10])}")
        print(f"{len(suite.testcases)} test cases, all programs halt")
    elif args.command == "eval":
        config = _config(args.config)
        print(do_eval(args.suite, config, args.out or default_out("results.json"), args.parallelism))
    elif args.command == "synth":
        print(do_synth(args.results, args.solver, args.node_budget, args.out or default_out("contract.json"),
                       args.exclude_families, args.fail_on_infeasible))
    elif args.command == "report":
        out = args.out or default_out("report")
        do_report(args.contract, args.results, out, args.heldout, args.points)
        print(out / "report.txt")
    elif args.command == "ingest":
        template = build_template(args.n_max)
        config = _config(args.config) if args.config else UarchConfig(preset_name="external")
        results = tuple(ingest_pair(a, b, template, f"p{k:06d}") for k, (a, b) in enumerate(args.pair))
        # ingested pairs have no suite; the digest covers the trace file names instead
        origin = digest_of({"pairs": [[str(a), str(b)] for a, b in args.pair]})
        print(write_results(ResultsFile(results, config, template, origin), args.out or default_out("results.json")))
    elif args.command == "pipeline":
        manifest = RunManifest.load(args.manifest)
        out = args.out or Path(manifest.output_dir or os.environ.get(OUT_ENV, "run"))
        digests = run_pipeline(manifest, out)
        for k in sorted(digests):
            print(f"{k} {digests[k]}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except AnalysisFailure as exc:
        _log(f"error: {exc}")
        return EXIT_ANALYSIS
    except (UsageError, ParseError, DigestMismatch, IllegalInstruction, OSError, ValueError) as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
