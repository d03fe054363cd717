"""Synthesis of hardware-software leakage contracts for RV32IM cores.

The pipeline: generate program pairs (``testgen``), run them on an
architectural model (``isa``) and a cycle-level timing model (``uarch``),
record which contract atoms (``template``) and which attacker observations
tell each pair apart (``evaluator``), then pick the cheapest set of atoms
that explains every observed leak (``synth``).
"""
from .evaluator import EvalResult, Metrics, evaluate, evaluate_suite, score
from .isa import Program, decode, encode, run_program
from .synth import SynthesisProblem, SynthesisResult, build_problem, solve, solve_exact, solve_greedy
from .template import Contract, Template, build_template
from .testgen import GenConfig, Suite, TestCase, gen_suite
from .uarch import UarchConfig, preset, simulate

__all__ = [
    "Contract", "EvalResult", "GenConfig", "Metrics", "Program", "Suite", "SynthesisProblem", "SynthesisResult",
    "Template", "TestCase", "UarchConfig", "build_problem", "build_template", "decode", "encode", "evaluate",
    "evaluate_suite", "gen_suite", "preset", "run_program", "score", "simulate", "solve", "solve_exact",
    "solve_greedy",
]
